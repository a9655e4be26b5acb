"""Minimal reverse-mode differentiation over numpy buffers."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    add,
    concat_rows,
    einsum,
    elementwise,
    gather_rows,
    layer_norm,
    linear,
    log,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_last,
    softmax_lastdim,
    sub,
    sum_all,
    tanh,
)
from .tensor import (
    DEFAULT_DTYPE,
    DTYPES,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    no_grad,
    record_op,
)

__all__ = [
    "DEFAULT_DTYPE",
    "DTYPES",
    "GradCheckReport",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "as_tensor",
    "backward",
    "concat_rows",
    "einsum",
    "elementwise",
    "gather_rows",
    "grad_check",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "record_op",
    "relative_error",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "slice_last",
    "softmax_lastdim",
    "sub",
    "sum_all",
    "tanh",
]
