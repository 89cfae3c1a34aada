"""Tiny layer/module system over the op library: named parameters in a
stable order (needed for checkpointing and Adam state)."""

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    def named_params(self, prefix=""):
        out = []
        for name, val in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((key, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(key))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_params(f"{key}.{i}"))
        return out

    def params(self):
        return [p for _, p in self.named_params()]


def _param(rng, shape, scale, dtype=np.float32):
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, stride=1):
        fan_in = cin * 9
        self.w = _param(rng, (cout, cin, 3, 3), np.sqrt(2.0 / fan_in))
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
        self.stride = stride

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride)


class ConvTranspose2d(Module):
    def __init__(self, rng, cin, cout):
        self.w = _param(rng, (cin, cout, 2, 2), np.sqrt(2.0 / (cin * 4)))
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.conv_transpose2d(x, self.w, self.b)


class Linear(Module):
    def __init__(self, rng, fin, fout):
        self.w = _param(rng, (fin, fout), np.sqrt(2.0 / fin))
        self.b = Tensor(np.zeros(fout, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.linear(x, self.w, self.b)


class GroupNorm(Module):
    def __init__(self, channels, groups=8):
        while channels % groups:
            groups //= 2
        self.groups = max(groups, 1)
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.group_norm(x, self.gamma, self.beta, self.groups)
