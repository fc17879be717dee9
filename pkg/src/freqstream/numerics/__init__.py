from .gradcheck import GradCheckResult, grad_check, grad_check_report
from .optim import AdamState, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    constant_matmul_last,
    exp,
    getitem,
    linear,
    matmul,
    mean,
    mul,
    neg,
    record_kinks,
    relu,
    reshape,
    sigmoid,
    sigmoid_array,
    soft_threshold,
    softmax,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "GradCheckResult", "ShapeError", "Tensor", "adam_step", "add", "as_tensor",
    "concat", "constant_matmul_last", "exp", "getitem", "grad_check", "grad_check_report",
    "linear", "matmul", "mean", "mul", "neg", "record_kinks", "relu", "reshape", "sigmoid",
    "sigmoid_array", "soft_threshold", "softmax", "sub", "tabs", "tanh", "transpose", "tsum",
]
