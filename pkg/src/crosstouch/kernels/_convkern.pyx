# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im kernels. Same layout and accumulation order as
conv_numpy, so results are bit-identical across backends."""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double


def out_size(int h, int w, int ksize, int stride, int pad):
    cdef int oh = (h + 2 * pad - ksize) // stride + 1
    cdef int ow = (w + 2 * pad - ksize) // stride + 1
    return oh, ow


@cython.boundscheck(False)
@cython.wraparound(False)
def _im2col_impl(real[:, :, :, ::1] x, real[:, :, ::1] cols,
                 int ksize, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = (h + 2 * pad - ksize) // stride + 1
    cdef int ow = (w + 2 * pad - ksize) // stride + 1
    cdef int i, j, kh, kw, y, xx, r, ih, iw
    with nogil:
        for i in range(n):
            for j in range(c):
                for kh in range(ksize):
                    for kw in range(ksize):
                        r = (j * ksize + kh) * ksize + kw
                        for y in range(oh):
                            ih = y * stride + kh - pad
                            if ih < 0 or ih >= h:
                                continue
                            for xx in range(ow):
                                iw = xx * stride + kw - pad
                                if iw < 0 or iw >= w:
                                    continue
                                cols[i, r, y * ow + xx] = x[i, j, ih, iw]


@cython.boundscheck(False)
@cython.wraparound(False)
def _col2im_impl(real[:, :, ::1] cols, real[:, :, :, ::1] x,
                 int ksize, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = (h + 2 * pad - ksize) // stride + 1
    cdef int ow = (w + 2 * pad - ksize) // stride + 1
    cdef int i, j, kh, kw, y, xx, r, ih, iw
    with nogil:
        for i in range(n):
            for j in range(c):
                for kh in range(ksize):
                    for kw in range(ksize):
                        r = (j * ksize + kh) * ksize + kw
                        for y in range(oh):
                            ih = y * stride + kh - pad
                            if ih < 0 or ih >= h:
                                continue
                            for xx in range(ow):
                                iw = xx * stride + kw - pad
                                if iw < 0 or iw >= w:
                                    continue
                                x[i, j, ih, iw] += cols[i, r, y * ow + xx]


def im2col(x, int ksize, int stride, int pad):
    assert x.dtype in (np.float32, np.float64)
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh, ow = out_size(h, w, ksize, stride, pad)
    cols = np.zeros((n, c * ksize * ksize, oh * ow), dtype=x.dtype)
    _im2col_impl(x, cols, ksize, stride, pad)
    return cols


def col2im(cols, x_shape, int ksize, int stride, int pad):
    assert cols.dtype in (np.float32, np.float64)
    cols = np.ascontiguousarray(cols)
    out = np.zeros(x_shape, dtype=cols.dtype)
    _col2im_impl(cols, out, ksize, stride, pad)
    return out
