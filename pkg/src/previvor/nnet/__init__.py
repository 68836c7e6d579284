"""Neural substrate: autodiff tensors, layers, losses, optimizer, and
checkpoint I/O shared by both learned stages."""

from . import checkpoint, gradcheck, layers, losses, optim, tensor
from .tensor import Tensor, backward

__all__ = [
    "Tensor",
    "backward",
    "checkpoint",
    "gradcheck",
    "layers",
    "losses",
    "optim",
    "tensor",
]
