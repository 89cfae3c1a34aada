"""Differentiable ops. Every op returns a Tensor wired to the tape via
make_op; gradients are verified against central finite differences in the
test suite (f64, h=1e-5)."""

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make_op


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_op(a.data / b.data, (a, b), grad_fn, "div")


def neg(a):
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def square(a):
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a):
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def log(a):
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a):
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def _sigmoid(x):
    # numerically stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    out = _sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a):
    s = _sigmoid(a.data)
    return make_op(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def relu(a):
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    s = _sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * s,), "softplus")


def clamp(a, lo, hi):
    mask = (a.data > lo) & (a.data < hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def tsum(a, axis=None, keepdims=False):
    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=True),)

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def grad_fn(g):
        if axis is None:
            gg = np.broadcast_to(g, a.shape)
        else:
            gg = np.broadcast_to(g if keepdims else np.expand_dims(g, axis), a.shape)
        return ((gg / count).astype(a.dtype, copy=False),)

    return make_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), grad_fn, "mean")


def reshape(a, shape):
    def grad_fn(g):
        return (g.reshape(a.shape),)

    return make_op(a.data.reshape(shape), (a,), grad_fn, "reshape")


def permute(a, axes):
    inverse = np.argsort(axes)

    def grad_fn(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), grad_fn, "permute")


def concat(tensors, axis=1):
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn, "concat"
    )


def linear(x, w, b=None):
    """x: (N, Fin), w: (Fin, Fout), b: (Fout,)"""
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        gb = g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(out, parents, grad_fn, "linear")


def conv2d(x, w, b=None, stride=1):
    """3x3 convolution, stride 1 or 2, pad 1 (spatial size H -> H/stride).

    x: (N, Cin, H, W), w: (Cout, Cin, 3, 3), b: (Cout,).
    Data movement runs through the kernels backend; the GEMM stays in BLAS.
    """
    if stride not in (1, 2):
        raise ValueError(f"conv2d supports stride 1 or 2, got {stride}")
    if w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d kernels are 3x3, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    oh, ow = kernels.out_size(h, wd, 3, stride, 1)
    cols = kernels.im2col(x.data, 3, stride, 1)  # (N, Cin*9, OH*OW)
    wm = w.data.reshape(cout, cin * 9)
    out = np.matmul(wm, cols)  # (N, Cout, OH*OW)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, cout, oh, ow)

    def grad_fn(g):
        gm = g.reshape(n, cout, oh * ow)
        # recompute cols rather than saving them: im2col is cheap next to GEMM
        cols_b = kernels.im2col(x.data, 3, stride, 1)
        gw = np.matmul(gm, cols_b.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gcols = np.matmul(wm.T, gm)
        gx = kernels.col2im(gcols, x.shape, 3, stride, 1)
        if b is not None:
            return gx, gw, gm.sum(axis=(0, 2))
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(out, parents, grad_fn, "conv2d")


def conv_transpose2d(x, w, b=None):
    """2x2 stride-2 transposed convolution (exact x2 upsampling, no overlap).

    x: (N, Cin, H, W), w: (Cin, Cout, 2, 2) -> (N, Cout, 2H, 2W).
    """
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    out = np.einsum("nchw,ckab->nkhawb", x.data, w.data, optimize=True).reshape(
        n, cout, 2 * h, 2 * wd
    )
    if b is not None:
        out += b.data[None, :, None, None]

    def grad_fn(g):
        g6 = g.reshape(n, cout, h, 2, wd, 2)
        gx = np.einsum("nkhawb,ckab->nchw", g6, w.data, optimize=True)
        gw = np.einsum("nkhawb,nchw->ckab", g6, x.data, optimize=True)
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return make_op(np.ascontiguousarray(out), parents, grad_fn, "conv_transpose2d")


def avg_pool2d(x):
    """2x2 average pooling, stride 2."""
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def grad_fn(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return (gx.astype(x.dtype, copy=False),)

    return make_op(out, (x,), grad_fn, "avg_pool2d")


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """GroupNorm over (C//groups, H, W) slices. gamma/beta: (C,)."""
    n, c, h, w = x.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    xg = x.data.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def grad_fn(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        m = xh.shape[2]
        gx = inv / m * (m * gxhat - gxhat.sum(axis=2, keepdims=True) - xh * (gxhat * xh).sum(axis=2, keepdims=True))
        return gx.reshape(x.shape).astype(x.dtype, copy=False), ggamma, gbeta

    return make_op(out, (x, gamma, beta), grad_fn, "group_norm")


def timestep_embedding(t, dim, max_period=10000.0, dtype=np.float32):
    """Sinusoidal embeddings for integer timesteps. t: (N,) -> (N, dim).

    Not differentiable w.r.t. t; returns a constant Tensor.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return Tensor(emb.astype(dtype))
