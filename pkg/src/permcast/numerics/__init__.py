"""Dense-tensor math with reverse-mode autodiff, optimizer, and gradcheck."""

from .tensor import (
    Tensor,
    abs,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    dropout,
    exp,
    getitem,
    matmul,
    mean,
    mul,
    neg,
    pow,
    reshape,
    softmax,
    sqrt,
    sub,
    sum,
    swapaxes,
    tanh,
    transpose,
)
from .functional import gelu, layer_norm, linear, mae_loss, multi_head_attention
from .gradcheck import GradcheckReport, finite_diff_gradcheck
from .optim import OptimizerState, adam_step, clip_global_norm, zero_grads

__all__ = [
    "Tensor",
    "abs",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "concat",
    "div",
    "dropout",
    "exp",
    "getitem",
    "matmul",
    "mean",
    "mul",
    "neg",
    "pow",
    "reshape",
    "softmax",
    "sqrt",
    "sub",
    "sum",
    "swapaxes",
    "tanh",
    "transpose",
    "gelu",
    "layer_norm",
    "linear",
    "mae_loss",
    "multi_head_attention",
    "GradcheckReport",
    "finite_diff_gradcheck",
    "OptimizerState",
    "adam_step",
    "clip_global_norm",
    "zero_grads",
]
