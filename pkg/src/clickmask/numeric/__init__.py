"""Reverse-mode autodiff on numpy arrays: tensors, kernels, losses, Adam."""

from . import ops
from .gradcheck import KERNELS, grad_check, kernel_tolerance
from .losses import binary_cross_entropy, focal_loss
from .optim import Adam, AdamState, adam_step
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "KERNELS",
    "Parameter",
    "Tensor",
    "adam_step",
    "binary_cross_entropy",
    "focal_loss",
    "grad_check",
    "kernel_tolerance",
    "no_grad",
    "ops",
]
