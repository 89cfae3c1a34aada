"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps an (up to 4-d) array plus an optional tape node: the parent
tensors and a closure computing their gradients from the output gradient.
backward() walks the tape once in reverse topological order. Training runs
in f32; gradient checks run the same graphs in f64.
"""

import contextlib

import numpy as np


class NumericsError(RuntimeError):
    """A sanctioned op produced NaN/Inf, or a gradient went non-finite."""


_grad_enabled = True
_finite_checks = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


_next_id = 0


def _new_id():
    global _next_id
    _next_id += 1
    return _next_id


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "grad_fn", "op", "id")

    def __init__(self, data, requires_grad=False, dtype=None):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=dtype or np.float32)
        elif dtype is not None and data.dtype != dtype:
            data = data.astype(dtype)
        if data.ndim > 4:
            raise ValueError(f"tensors are limited to 4 dims, got shape {data.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.grad_fn = None
        self.op = "leaf"
        self.id = _new_id()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad_fn is None or node.grad is None:
                continue
            grads = node.grad_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not (parent.requires_grad or parent.grad_fn is not None):
                    continue
                if _finite_checks and not np.isfinite(g).all():
                    raise NumericsError(
                        f"non-finite gradient flowing into node id={parent.id} "
                        f"op={parent.op} from op={node.op}"
                    )
                parent.grad = g if parent.grad is None else parent.grad + g


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in visited:
            continue
        visited.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in visited and p.grad_fn is not None:
                stack.append((p, False))
    return order


def make_op(data, parents, grad_fn, op):
    """Build an op output: finiteness check, and a tape node when any parent
    participates in the graph and grad mode is on."""
    data = np.asarray(data)  # keep numpy scalars (e.g. reductions) at full precision
    if _finite_checks and not np.isfinite(data).all():
        raise NumericsError(f"op {op!r} produced non-finite values")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad or p.grad_fn is not None for p in parents):
        out.parents = tuple(parents)
        out.grad_fn = grad_fn
    return out


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
