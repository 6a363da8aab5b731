"""Differentiable dense-tensor computation on numpy."""

from .gradcheck import grad_check
from .rng import RngStream
from .tensor import (
    Tensor,
    add,
    apply_dropout_mask,
    concat,
    cross_entropy_mean,
    default_dtype,
    div,
    dropout,
    embedding,
    exp,
    gelu,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mul,
    neg,
    no_grad,
    precision,
    reshape,
    scale,
    set_default_dtype,
    softmax_rows,
    take,
    transpose,
)

__all__ = [
    "RngStream",
    "Tensor",
    "add",
    "apply_dropout_mask",
    "concat",
    "cross_entropy_mean",
    "default_dtype",
    "div",
    "dropout",
    "embedding",
    "exp",
    "gelu",
    "grad_check",
    "is_grad_enabled",
    "l2_normalize",
    "layer_norm",
    "log",
    "logsumexp",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "precision",
    "reshape",
    "scale",
    "set_default_dtype",
    "softmax_rows",
    "take",
    "transpose",
]
