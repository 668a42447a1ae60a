"""Convolution and dense layers built on the tensor core."""

from __future__ import annotations

import numpy as np

from mbanet.tensor_core import functional as F
from mbanet.tensor_core.module import BatchNorm, Module, Parameter
from mbanet.tensor_core.tensor import DEFAULT_DTYPE, Tensor


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 padding: int | None = None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(np.zeros((out_channels, in_channels, kernel, kernel)), init="fan_in", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.weight = Parameter(np.zeros((out_features, in_features)), init="fan_in", dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), init="zeros", dtype=dtype) if bias else None

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.relu(x)


class MaxPool(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.max_pool2d(x, 3, 2, 1)


class ConvBNReLU(Module):
    """3x3 conv, batch norm, ReLU."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride, dtype=dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))
