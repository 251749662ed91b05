"""Minimal dense-tensor engine with reverse-mode autodiff and Adam."""

from .tensor import (
    ContractError,
    DomainError,
    ShapeError,
    Tensor,
    UnsupportedOpError,
    constant,
    full,
    uniform,
    zeros,
)
from .ops import (
    add,
    avgpool2x,
    broadcast_spatial,
    concat,
    conv2d,
    exp,
    gather_rows,
    linear,
    log,
    mul,
    narrow,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    segment_sum,
    sigmoid,
    softmax_over_channel,
    sub,
    sum_axis,
    square,
    upsample2x,
)
from .optim import Adam, PlateauScheduler
from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .gradcheck import max_grad_error, numerical_grad_at

__all__ = [
    "Tensor", "ShapeError", "DomainError", "ContractError", "UnsupportedOpError",
    "zeros", "full", "uniform", "constant",
    "add", "sub", "mul", "exp", "log", "square", "relu", "sigmoid",
    "reduce_sum", "reduce_mean", "sum_axis", "softmax_over_channel",
    "linear", "conv2d", "upsample2x", "avgpool2x",
    "concat", "narrow", "reshape", "broadcast_spatial", "gather_rows", "segment_sum",
    "Adam", "PlateauScheduler",
    "save_checkpoint", "load_checkpoint", "checkpoint_hash",
    "max_grad_error", "numerical_grad_at",
]
