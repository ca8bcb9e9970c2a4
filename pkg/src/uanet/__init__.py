"""Uncertainty-aware building segmentation on a small numpy autodiff engine."""

from .tensor import (
    GraphError,
    ShapeError,
    Tape,
    Tensor,
    concat,
    default_dtype,
    matmul,
    parameter,
    set_default_dtype,
    split,
    tensor,
)

__version__ = "0.1.0"
