from .checkpoint import dumps_tensors, load_tensors, loads_tensors, save_tensors
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    cross_entropy,
    exp,
    expand,
    gather,
    getitem,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mean_sq_l2,
    mse,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "add", "as_tensor", "broadcast_to",
    "concat", "cross_entropy", "dumps_tensors", "exp", "expand", "gather", "getitem",
    "is_grad_enabled", "layer_norm", "load_tensors", "loads_tensors", "log", "log_softmax",
    "matmul", "mean", "mean_sq_l2", "mse", "mul", "neg", "no_grad", "relu", "reshape",
    "save_tensors", "sigmoid", "softmax", "square", "stack", "sub", "swapaxes", "tanh",
    "transpose", "tsum",
]
