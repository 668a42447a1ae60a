"""Dense tensors with reverse-mode gradients and the ops the attention network needs."""

from mbanet.tensor_core.functional import (
    batch_norm,
    conv2d,
    dropout,
    global_average_pool,
    leaky_relu,
    linear,
    log_softmax,
    max_pool2d,
    pointwise_conv,
    relu,
    softmax_rows,
)
from mbanet.tensor_core.gradcheck import check_gradients, numerical_grad, relative_error
from mbanet.tensor_core.module import BatchNorm, BatchNormState, Module, Parameter, Sequential
from mbanet.tensor_core.tensor import (
    Tensor,
    add,
    concat,
    exp,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    sub,
    take_along,
    tensor,
    transpose,
    tsum,
    where,
)

__all__ = [
    "Tensor", "tensor", "no_grad", "add", "sub", "mul", "matmul", "exp", "log", "mean", "tsum",
    "reshape", "transpose", "concat", "take_along", "where",
    "softmax_rows", "log_softmax", "relu", "leaky_relu", "dropout", "global_average_pool",
    "batch_norm", "pointwise_conv", "conv2d", "max_pool2d", "linear",
    "Module", "Parameter", "Sequential", "BatchNorm", "BatchNormState",
    "check_gradients", "numerical_grad", "relative_error",
]
