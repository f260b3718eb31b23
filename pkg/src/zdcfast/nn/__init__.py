"""Minimal differentiable-computation layer: tensors, ops, Adam."""

from . import ops
from .optim import Adam
from .tensor import Parameter, Tensor, exp, is_grad_enabled, no_grad

__all__ = ["Adam", "Parameter", "Tensor", "exp", "is_grad_enabled", "no_grad", "ops"]
