"""Neural-network operations on :class:`Tensor` with hand-written backward passes."""

from __future__ import annotations

from typing import Optional

import numpy as np

from mbanet.errors import ShapeError
from mbanet.tensor_core.tensor import Tensor, make_result, matmul, mean, reshape, where


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by subtracting the row maximum."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result(out, (a,), backward, "softmax_rows")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (a,), backward, "log_softmax")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(a.data * mask, (a,), backward, "relu")


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)

    def backward(g):
        return (g * scale,)

    return make_result(a.data * scale, (a,), backward, "leaky_relu")


def dropout(a: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity outside training or when ``p == 0``."""
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return make_result(a.data * keep, (a,), backward, "dropout")


def global_average_pool(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C] mean over spatial positions."""
    if x.ndim != 4:
        raise ShapeError(f"global_average_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In eval mode the running statistics are used and nothing is
    mutated.
    """
    if x.ndim not in (2, 4) or x.shape[1] != scale.shape[0]:
        raise ShapeError(f"batch_norm over {scale.shape[0]} channels got input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    gamma = scale.data.reshape(bshape)

    if training:
        n = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        n = None
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std.reshape(bshape)
    xhat = xhat.astype(x.dtype, copy=False)
    inv_std = inv_std.astype(x.dtype, copy=False)
    out = gamma * xhat + shift.data.reshape(bshape)

    def backward(g):
        dscale = (g * xhat).sum(axis=axes)
        dshift = g.sum(axis=axes)
        dxhat = g * gamma
        if training:
            dx = (inv_std.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dscale, dshift

    return make_result(out, (x, scale, shift), backward, "batch_norm")


def pointwise_conv(x: Tensor, weight: Tensor, bn=None, activation: str = "none", training: bool = False) -> Tensor:
    """1x1 convolution [B,Cin,H,W] -> [B,Cout,H,W], then optional BN and ReLU."""
    if x.ndim != 4 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise_conv weight {weight.shape} does not fit input {x.shape}")
    b, c, h, w = x.shape
    y = matmul(weight, reshape(x, (b, c, h * w)))
    y = reshape(y, (b, weight.shape[0], h, w))
    if bn is not None:
        y = bn(y, training=training)
    if activation == "relu":
        y = relu(y)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return y


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D convolution (cross-correlation), no bias, via im2col."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d weight {weight.shape} does not fit input {x.shape}")
    b, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _windows(xp, kh, kw, stride, ho, wo)  # b, cin, ho, wo, kh, kw
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        dw = (gmat.T @ cols).reshape(weight.shape)
        dcols = (gmat @ wmat).reshape(b, ho, wo, cin, kh, kw)
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw

    return make_result(np.ascontiguousarray(out), (x, weight), backward, "conv2d")


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    b, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    xp = np.pad(
        x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf
    )
    win = _windows(xp, kernel, kernel, stride, ho, wo).reshape(b, c, ho, wo, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        di, dj = np.divmod(arg, kernel)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (bi, ci, rows, cols), g)
        return (dxp[:, :, padding : padding + h, padding : padding + w],)

    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """[B, in] x weight[out, in]^T + bias."""
    y = matmul(x, weight.T)
    return y + bias if bias is not None else y


__all__ = [
    "softmax_rows",
    "log_softmax",
    "relu",
    "leaky_relu",
    "dropout",
    "global_average_pool",
    "batch_norm",
    "pointwise_conv",
    "conv2d",
    "max_pool2d",
    "linear",
    "where",
]
