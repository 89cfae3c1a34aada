from . import gradcheck, modules, ops, optim, serialize
from .optim import AdamState, adam_step
from .tensor import NumericsError, Tensor, no_grad, zero_grads

__all__ = [
    "AdamState",
    "NumericsError",
    "Tensor",
    "adam_step",
    "gradcheck",
    "modules",
    "no_grad",
    "ops",
    "optim",
    "serialize",
    "zero_grads",
]
