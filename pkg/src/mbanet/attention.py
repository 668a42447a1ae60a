"""Channel attention (CAM) and spatial attention with relative positional encodings (SAM-RPE).

Feature maps are batched ``[B, C, H, W]``; each batch element is attended
independently with shared parameters. Flattened spatial positions use
row-major order, ``p = h * W + w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mbanet.errors import ShapeError
from mbanet.tensor_core import functional as F
from mbanet.tensor_core.module import BatchNorm, Module, Parameter
from mbanet.tensor_core.tensor import DEFAULT_DTYPE, Tensor, matmul, reshape, take_along, transpose

RPE_VARIANTS = ("paper", "rowwise")


@dataclass(frozen=True)
class ReindexMask:
    """0/1 matrix mapping each flattened position to one relative-shift row.

    For ``axis="height"`` the matrix is ``HW x (2H-1)``: position ``(h, i)``
    (row ``h``, column ``i``) selects shift ``r = i - h`` at column
    ``r + H - 1``. For ``axis="width"`` the roles of H and W swap: position
    ``(j, w)`` selects ``r = j - w`` at column ``r + W - 1`` of an
    ``HW x (2W-1)`` matrix. Shifts outside ``[-(L-1), L-1]`` leave the row empty.
    """

    axis: str
    height: int
    width: int
    matrix: np.ndarray

    @property
    def num_shifts(self) -> int:
        return self.matrix.shape[1]


def build_reindex_mask(axis: str, height: int, width: int, dtype=DEFAULT_DTYPE) -> ReindexMask:
    if height < 1 or width < 1:
        raise ShapeError(f"mask extents must be positive, got H={height}, W={width}")
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    if axis == "height":
        extent, shift = height, cols - rows
    elif axis == "width":
        extent, shift = width, rows - cols
    else:
        raise ValueError(f"axis must be 'height' or 'width', got {axis!r}")
    shift = shift.reshape(-1)
    matrix = np.zeros((height * width, 2 * extent - 1), dtype=dtype)
    valid = np.abs(shift) <= extent - 1
    matrix[np.flatnonzero(valid), shift[valid] + extent - 1] = 1
    return ReindexMask(axis, height, width, matrix)


def relative_index(axis: str, height: int, width: int) -> np.ndarray:
    """``[HW, HW]`` shift-row index ``coord(k) - coord(q) + L - 1`` for the rowwise variant."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    coord, extent = (rows, height) if axis == "height" else (cols, width)
    coord = coord.reshape(-1)
    return coord[:, None] - coord[None, :] + extent - 1


def relative_position_term(q: Tensor, v: Tensor, r_emb: Tensor, mask: ReindexMask) -> Tensor:
    """Positional attention output ``V (P Q)`` with ``P = mask @ r_emb``.

    ``q`` is ``[d_k, HW]`` (or batched ``[B, d_k, HW]``), ``v`` is ``[C, HW]``
    (or ``[B, C, HW]``). Returns ``[C, H, W]`` (or ``[B, C, H, W]``). Only the
    ``HW x (2L-1)`` mask and the ``HW x d_k`` embedding table are formed.
    """
    n = mask.height * mask.width
    if q.shape[-1] != n or v.shape[-1] != n:
        raise ShapeError(f"q {q.shape} / v {v.shape} do not have {n} positions")
    if r_emb.shape != (mask.num_shifts, q.shape[-2]):
        raise ShapeError(f"embedding {r_emb.shape} != ({mask.num_shifts}, {q.shape[-2]})")
    pos = matmul(Tensor(mask.matrix.astype(r_emb.dtype)), r_emb)  # HW x d_k
    attn = matmul(pos, q)  # [B,] HW x HW
    out = matmul(v, attn)
    return reshape(out, v.shape[:-1] + (mask.height, mask.width))


def rowwise_relative_term(q: Tensor, v: Tensor, r_emb: Tensor, axis: str, height: int, width: int) -> Tensor:
    """Alternative positional term comparing the same coordinate of key and query.

    Entry ``(k, q)`` of the positional attention is ``r_emb[coord(k) - coord(q)] . Q[:, q]``.
    It is computed as a gather from the ``(2L-1) x HW`` logits ``r_emb @ Q``.
    """
    batched = q.ndim == 3
    if not batched:
        q, v = reshape(q, (1,) + q.shape), reshape(v, (1,) + v.shape)
    logits = matmul(r_emb, q)  # B x (2L-1) x HW
    index = relative_index(axis, height, width)[None]
    attn = take_along(logits, index, axis=1)  # B x HW x HW
    out = reshape(matmul(v, attn), (v.shape[0], v.shape[1], height, width))
    return out if batched else reshape(out, out.shape[1:])


class ChannelAttention(Module):
    """CAM state: only the residual weight ``gamma`` (starts at exactly 0)."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.gamma = Parameter(np.zeros(1), init="zeros", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return cam_forward(x, self)


CamState = ChannelAttention


class Projection(Module):
    """Pointwise conv + BN + ReLU used for the key, query and value embeddings."""

    def __init__(self, in_channels: int, out_channels: int, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.weight = Parameter(np.zeros((out_channels, in_channels)), init="fan_in", dtype=dtype)
        self.bn = BatchNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor, training: bool | None = None) -> Tensor:
        training = self.training if training is None else training
        return F.pointwise_conv(x, self.weight, self.bn, "relu", training=training)


class SpatialAttentionRPE(Module):
    """SAM-RPE state for a fixed ``H x W`` feature map with ``C >= 8`` channels.

    ``rpe=False`` drops the two positional terms and their parameters, leaving
    plain content attention.
    """

    def __init__(self, channels: int, height: int, width: int, rpe: bool = True,
                 rpe_variant: str = "paper", dtype=DEFAULT_DTYPE):
        super().__init__()
        if channels < 8:
            raise ValueError(f"SAM-RPE needs at least 8 channels, got {channels}")
        if rpe_variant not in RPE_VARIANTS:
            raise ValueError(f"rpe_variant must be one of {RPE_VARIANTS}, got {rpe_variant!r}")
        self.channels, self.height, self.width = channels, height, width
        self.key_dim = channels // 8
        self.rpe = rpe
        self.rpe_variant = rpe_variant
        self.w_k = Projection(channels, self.key_dim, dtype)
        self.w_q = Projection(channels, self.key_dim, dtype)
        self.w_v = Projection(channels, channels, dtype)
        if rpe:
            std = 1.0 / np.sqrt(self.key_dim)
            self.r_h = Parameter(np.zeros((2 * height - 1, self.key_dim)), init=std, dtype=dtype)
            self.r_w = Parameter(np.zeros((2 * width - 1, self.key_dim)), init=std, dtype=dtype)
            self.bn_h = BatchNorm(channels, dtype=dtype)
            self.bn_w = BatchNorm(channels, dtype=dtype)
            self.mask_h = build_reindex_mask("height", height, width)
            self.mask_w = build_reindex_mask("width", height, width)
        self.gamma = Parameter(np.zeros(1), init="zeros", dtype=dtype)

    def forward(self, x: Tensor, training: bool | None = None) -> Tensor:
        return sam_rpe_forward(x, self, training)


SamRpeState = SpatialAttentionRPE


def channel_attention_map(x: Tensor) -> Tensor:
    """``softmax_rows(K Q^T)`` with K = Q = the ``[B, C, HW]`` reshape of ``x``."""
    b, c, h, w = x.shape
    m = reshape(x, (b, c, h * w))
    return F.softmax_rows(matmul(m, transpose(m, (0, 2, 1))))


def cam_forward(x: Tensor, state: ChannelAttention) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"cam_forward expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    values = reshape(x, (b, c, h * w))
    attended = reshape(matmul(channel_attention_map(x), values), x.shape)
    return state.gamma * attended + x


def _project(x: Tensor, state: SpatialAttentionRPE, training: bool):
    b, c, h, w = x.shape
    n = h * w
    k = reshape(state.w_k(x, training), (b, state.key_dim, n))
    q = reshape(state.w_q(x, training), (b, state.key_dim, n))
    v = reshape(state.w_v(x, training), (b, c, n))
    return k, q, v


def spatial_attention_map(x: Tensor, state: SpatialAttentionRPE, training: bool | None = None) -> Tensor:
    """Content attention ``softmax_rows(K^T Q)``, shape ``[B, HW, HW]``."""
    training = state.training if training is None else training
    k, q, _ = _project(x, state, training)
    return F.softmax_rows(matmul(transpose(k, (0, 2, 1)), q))


def sam_rpe_forward(x: Tensor, state: SpatialAttentionRPE, training: bool | None = None) -> Tensor:
    """``gamma * (V A_s + BN(E_H) + BN(E_W)) + x``."""
    if x.ndim != 4:
        raise ShapeError(f"sam_rpe_forward expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if (c, h, w) != (state.channels, state.height, state.width):
        raise ShapeError(
            f"SAM-RPE built for {(state.channels, state.height, state.width)}, got {(c, h, w)}"
        )
    training = state.training if training is None else training
    k, q, v = _project(x, state, training)
    attn = F.softmax_rows(matmul(transpose(k, (0, 2, 1)), q))
    total = reshape(matmul(v, attn), x.shape)
    if state.rpe:
        if state.rpe_variant == "paper":
            e_h = relative_position_term(q, v, state.r_h, state.mask_h)
            e_w = relative_position_term(q, v, state.r_w, state.mask_w)
        else:
            e_h = rowwise_relative_term(q, v, state.r_h, "height", h, w)
            e_w = rowwise_relative_term(q, v, state.r_w, "width", h, w)
        total = total + state.bn_h(e_h, training) + state.bn_w(e_w, training)
    return state.gamma * total + x
