"""Reverse-mode autodiff on numpy with second-order support, plus Adam."""
from . import tensor as ops
from .optim import AdamState, adam_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    no_record,
    record,
    set_check_finite,
    tape,
)

__all__ = [
    "AdamState",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "no_record",
    "ops",
    "record",
    "set_check_finite",
    "tape",
]
