"""Adam with standard bias correction."""

import numpy as np


class AdamState:
    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(state, params, grads=None):
    """One Adam update. grads defaults to each param's accumulated .grad;
    params with no gradient are left untouched."""
    if grads is None:
        grads = [p.grad for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.data.dtype)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params
