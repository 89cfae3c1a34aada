"""Pure-numpy im2col/col2im fallback for the conv2d hot path.

Layout contract (shared with the Cython backend):
    cols[n, c*k*k + kh*k + kw, oh*OW + ow] = x_pad[n, c, oh*s + kh, ow*s + kw]

col2im accumulates in ascending (kh, kw) order so both backends produce
bit-identical results.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_size(h, w, ksize, stride, pad):
    oh = (h + 2 * pad - ksize) // stride + 1
    ow = (w + 2 * pad - ksize) // stride + 1
    return oh, ow


def im2col(x, ksize, stride, pad):
    n, c, h, w = x.shape
    oh, ow = out_size(h, w, ksize, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    windows = as_strided(
        x,
        shape=(n, c, ksize, ksize, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    return np.ascontiguousarray(windows).reshape(n, c * ksize * ksize, oh * ow)


def col2im(cols, x_shape, ksize, stride, pad):
    n, c, h, w = x_shape
    oh, ow = out_size(h, w, ksize, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad
    x_pad = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, ksize, ksize, oh, ow)
    for kh in range(ksize):
        for kw in range(ksize):
            x_pad[:, :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride] += cols[
                :, :, kh, kw
            ]
    if pad > 0:
        return x_pad[:, :, pad : pad + h, pad : pad + w].copy()
    return x_pad
