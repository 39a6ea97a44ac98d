"""Reverse-mode tensors, gradient checks, optimizer, schedule and checkpoint IO."""

from imgcot.numerics.checkpoint import load_checkpoint, save_checkpoint
from imgcot.numerics.gradcheck import finite_diff_check, finite_diff_check_params
from imgcot.numerics.optim import AdamW, CosineRestartSchedule, schedule_rate
from imgcot.numerics.rng import make_rng
from imgcot.numerics.tensor import (
    PRIMITIVES,
    Tensor,
    add,
    backward,
    cross_entropy,
    default_dtype,
    embedding,
    gather,
    gelu,
    get_default_dtype,
    layernorm,
    matmul,
    mse,
    mul,
    no_grad,
    reshape,
    set_default_dtype,
    sg,
    softmax,
    stop_gradient,
    tensor,
    transpose,
)

__all__ = [
    "AdamW", "CosineRestartSchedule", "PRIMITIVES", "Tensor", "add", "backward", "cross_entropy",
    "default_dtype", "embedding", "finite_diff_check", "finite_diff_check_params", "gather", "gelu",
    "get_default_dtype", "layernorm", "load_checkpoint", "make_rng", "matmul", "mse", "mul", "no_grad",
    "reshape", "save_checkpoint", "schedule_rate", "set_default_dtype", "sg", "softmax", "stop_gradient",
    "tensor", "transpose",
]
