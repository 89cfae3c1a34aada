"""Central finite-difference gradient checking (f64, h=1e-5).

The relative error is max-norm based: ||g_an - g_fd||_inf / (||g_fd||_inf + tiny),
computed per checked tensor.
"""

import numpy as np

from .tensor import zero_grads


def finite_diff_grad(fn, tensors, idx, h=1e-5):
    """Numerical gradient of scalar fn() w.r.t. tensors[idx] by central differences."""
    t = tensors[idx]
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradients(fn, tensors, h=1e-5):
    """Compare analytic and finite-difference gradients of scalar fn().

    Returns the worst relative error over the checked tensors.
    """
    zero_grads(tensors)
    loss = fn()
    loss.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        g_fd = finite_diff_grad(fn, tensors, i, h=h)
        g_an = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = np.abs(g_fd).max() + 1e-12
        rel = np.abs(g_an - g_fd).max() / denom
        worst = max(worst, rel)
    return worst
