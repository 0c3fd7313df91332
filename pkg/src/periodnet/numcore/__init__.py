"""Minimal differentiable tensor engine."""

from .gradcheck import GradCheckReport, NondeterminismError, finite_diff_check, relative_error
from .optim import Adam, AdamState, adam_step
from .params import named_parameters
from .tensor import (
    GraphError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    permute,
    record_relu_patterns,
    relu,
    reshape,
    scale,
    softmax,
    softmax_rows,
    sub,
    sum,
    swapaxes,
    take,
    transpose,
    zeros,
)
