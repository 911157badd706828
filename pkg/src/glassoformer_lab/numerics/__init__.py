"""Minimal dense tensors with tape-based reverse-mode differentiation."""
from . import ops
from .gradcheck import analytic_gradient, check_gradient, numerical_gradient
from .ops import conv1d, elu, matmul, softmax_rows
from .rng import Rng
from .tensor import NumericalError, ShapeError, Tape, Tensor, active_tape, backward

__all__ = [
    "Tensor", "Tape", "Rng", "NumericalError", "ShapeError", "backward", "active_tape",
    "ops", "matmul", "softmax_rows", "elu", "conv1d",
    "check_gradient", "numerical_gradient", "analytic_gradient",
]
