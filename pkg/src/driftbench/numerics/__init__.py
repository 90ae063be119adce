"""Dense tensors, tape-based reverse-mode differentiation and Adam."""

from . import ops
from .adam import AdamState, adam_step
from .gradcheck import finite_diff_grad, relative_error
from .ops import (
    dropout,
    log_softmax,
    lstm_layer,
    matmul,
    quadratic_penalty,
    softmax,
    weighted_softmax_xent,
)
from .tensor import (
    ContractError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    current_tape,
    default_dtype,
    precision,
)

__all__ = [
    "AdamState", "ContractError", "NonFiniteError", "ShapeError", "Tape", "Tensor",
    "adam_step", "backward", "current_tape", "default_dtype", "dropout",
    "finite_diff_grad", "log_softmax", "lstm_layer", "matmul", "ops", "precision",
    "quadratic_penalty", "relative_error", "softmax", "weighted_softmax_xent",
]
