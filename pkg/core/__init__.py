"""Minimal tensor library: tape autodiff, parameter containers and AdamW."""
from .module import MLP, Linear, Module
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    GradientMap,
    InvalidAxisError,
    NonScalarLossError,
    NumericDomainError,
    ShapeMismatchError,
    Tape,
    Tensor,
    TensorError,
    activation,
    backward,
    bce_with_logits,
    elementwise,
    matmul,
    precision,
    reduce_stats,
)

__all__ = [
    "Tensor",
    "Tape",
    "GradientMap",
    "TensorError",
    "ShapeMismatchError",
    "NumericDomainError",
    "InvalidAxisError",
    "NonScalarLossError",
    "matmul",
    "elementwise",
    "activation",
    "reduce_stats",
    "bce_with_logits",
    "backward",
    "precision",
    "Module",
    "Linear",
    "MLP",
    "AdamW",
    "AdamWState",
    "adamw_step",
]
