"""
ndgrad: dense float64 tensors with reverse-mode autodiff, layers and optimizers.
"""

from colabel.ndgrad import functional
from colabel.ndgrad.gradcheck import grad_check, grad_check_parameters
from colabel.ndgrad.nn import Conv2d, Linear, Module, glorot_uniform
from colabel.ndgrad.optim import SGD, Adam, OptimizerState, optimizer_step
from colabel.ndgrad.serialization import load_weights, save_weights
from colabel.ndgrad.tensor import (
    GradGraph,
    Parameter,
    Tensor,
    as_tensor,
    concat,
    is_grad_enabled,
    matmul,
    no_grad,
)

__all__ = [
    "Adam",
    "Conv2d",
    "GradGraph",
    "Linear",
    "Module",
    "OptimizerState",
    "Parameter",
    "SGD",
    "Tensor",
    "as_tensor",
    "concat",
    "functional",
    "glorot_uniform",
    "grad_check",
    "grad_check_parameters",
    "is_grad_enabled",
    "load_weights",
    "matmul",
    "no_grad",
    "optimizer_step",
    "save_weights",
]
