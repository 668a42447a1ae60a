"""Slow, loop-based reference implementations used as test oracles.

Nothing here touches :mod:`mbanet.tensor_core`; every quantity is spelled
out element by element in float64 so it can be compared against the
vectorized code paths.
"""

from __future__ import annotations

import math

import numpy as np


def reindex_tensor(axis: str, height: int, width: int) -> np.ndarray:
    """The 3-D re-indexing tensor, flattened over its first two axes in map order.

    Height: ``I[h, i, r] = 1`` iff ``i - h == r`` for ``h < H``, ``i < W``,
    ``-(H-1) <= r <= H-1``. Width swaps the roles: ``I[w, j, r] = 1`` iff
    ``j - w == r`` for ``w < W``, ``j < H``; position ``(j, w)`` is row ``j``,
    column ``w``.
    """
    if axis == "height":
        extent = height
        tensor = np.zeros((height, width, 2 * height - 1))
        for h in range(height):
            for i in range(width):
                for k, r in enumerate(range(-(height - 1), height)):
                    if i - h == r:
                        tensor[h, i, k] = 1.0
        return tensor.reshape(height * width, 2 * extent - 1)
    tensor = np.zeros((height, width, 2 * width - 1))
    for j in range(height):
        for w in range(width):
            for k, r in enumerate(range(-(width - 1), width)):
                if j - w == r:
                    tensor[j, w, k] = 1.0
    return tensor.reshape(height * width, 2 * width - 1)


def _softmax_row(row):
    top = max(row)
    exps = [math.exp(v - top) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def cam(x: np.ndarray, gamma: float) -> np.ndarray:
    """Channel attention on [B, C, H, W] by explicit sums."""
    b, c, h, w = x.shape
    out = np.array(x, dtype=np.float64)
    for n in range(b):
        flat = [[x[n, ch, i, j] for i in range(h) for j in range(w)] for ch in range(c)]
        for row in range(c):
            logits = [sum(flat[row][p] * flat[col][p] for p in range(h * w)) for col in range(c)]
            weights = _softmax_row(logits)
            for p in range(h * w):
                attended = sum(weights[col] * flat[col][p] for col in range(c))
                out[n, row, p // w, p % w] += gamma * attended
    return out


def _bn(values: np.ndarray, scale, shift, mean, var, eps):
    """values: [B, C, N]; per-channel statistics supplied or computed."""
    out = np.zeros_like(values)
    b, c, n = values.shape
    for ch in range(c):
        if mean is None:
            items = [values[i, ch, p] for i in range(b) for p in range(n)]
            mu = sum(items) / len(items)
            sigma2 = sum((v - mu) ** 2 for v in items) / len(items)
        else:
            mu, sigma2 = mean[ch], var[ch]
        for i in range(b):
            for p in range(n):
                out[i, ch, p] = scale[ch] * (values[i, ch, p] - mu) / math.sqrt(sigma2 + eps) + shift[ch]
    return out


def _projection(x, weight, bn, training, eps):
    b, cin, n = x.shape
    cout = weight.shape[0]
    lin = np.zeros((b, cout, n))
    for i in range(b):
        for o in range(cout):
            for p in range(n):
                lin[i, o, p] = sum(weight[o, ci] * x[i, ci, p] for ci in range(cin))
    stats = (None, None) if training else (bn["running_mean"], bn["running_var"])
    return np.maximum(_bn(lin, bn["scale"], bn["shift"], *stats, eps), 0.0)


def sam_rpe(x: np.ndarray, params: dict, training: bool = False, eps: float = 1e-5) -> np.ndarray:
    """Spatial attention with relative positions on [B, C, H, W] by explicit sums.

    ``params`` holds ``w_k``, ``w_q``, ``w_v`` (each ``{"weight", "bn"}``),
    ``r_h``, ``r_w``, ``bn_h``, ``bn_w`` (each BN a dict of ``scale``,
    ``shift``, ``running_mean``, ``running_var``) and ``gamma``. ``r_h`` set to
    None skips the positional terms.
    """
    b, c, h, w = x.shape
    n = h * w
    flat = np.asarray(x, dtype=np.float64).reshape(b, c, n)
    k = _projection(flat, params["w_k"]["weight"], params["w_k"]["bn"], training, eps)
    q = _projection(flat, params["w_q"]["weight"], params["w_q"]["bn"], training, eps)
    v = _projection(flat, params["w_v"]["weight"], params["w_v"]["bn"], training, eps)
    dk = k.shape[1]

    content = np.zeros((b, c, n))
    for i in range(b):
        attn = []
        for src in range(n):
            logits = [sum(k[i, d, src] * q[i, d, dst] for d in range(dk)) for dst in range(n)]
            attn.append(_softmax_row(logits))
        for ch in range(c):
            for dst in range(n):
                content[i, ch, dst] = sum(v[i, ch, src] * attn[src][dst] for src in range(n))

    total = content
    if params.get("r_h") is not None:
        e_h = np.zeros((b, c, n))
        e_w = np.zeros((b, c, n))
        for i in range(b):
            for ch in range(c):
                for dst in range(n):
                    acc_h = acc_w = 0.0
                    for src in range(n):
                        row, col = divmod(src, w)
                        shift_h = col - row  # height embedding compares column with row
                        shift_w = row - col
                        if abs(shift_h) <= h - 1:
                            emb = params["r_h"][shift_h + h - 1]
                            acc_h += v[i, ch, src] * sum(emb[d] * q[i, d, dst] for d in range(dk))
                        if abs(shift_w) <= w - 1:
                            emb = params["r_w"][shift_w + w - 1]
                            acc_w += v[i, ch, src] * sum(emb[d] * q[i, d, dst] for d in range(dk))
                    e_h[i, ch, dst] = acc_h
                    e_w[i, ch, dst] = acc_w

        def norm(values, bn):
            stats = (None, None) if training else (bn["running_mean"], bn["running_var"])
            return _bn(values, bn["scale"], bn["shift"], *stats, eps)

        total = content + norm(e_h, params["bn_h"]) + norm(e_w, params["bn_w"])
    return (params["gamma"] * total + flat).reshape(b, c, h, w)


def sam_rpe_params(state) -> dict:
    """Pull the arrays of a :class:`~mbanet.attention.SpatialAttentionRPE` into plain float64 dicts."""

    def bn(mod):
        return {
            "scale": mod.scale.data.astype(np.float64),
            "shift": mod.shift.data.astype(np.float64),
            "running_mean": mod.running_mean.astype(np.float64),
            "running_var": mod.running_var.astype(np.float64),
        }

    def proj(mod):
        return {"weight": mod.weight.data.astype(np.float64), "bn": bn(mod.bn)}

    params = {
        "w_k": proj(state.w_k),
        "w_q": proj(state.w_q),
        "w_v": proj(state.w_v),
        "gamma": float(state.gamma.data[0]),
        "r_h": None,
    }
    if state.rpe:
        params.update(
            r_h=state.r_h.data.astype(np.float64),
            r_w=state.r_w.data.astype(np.float64),
            bn_h=bn(state.bn_h),
            bn_w=bn(state.bn_w),
        )
    return params


def average_precision(ranked_labels, query_label) -> float:
    """Mean of precision@k over every rank k holding a relevant item."""
    hits = 0
    precisions = []
    for k, label in enumerate(ranked_labels, start=1):
        if label == query_label:
            hits += 1
            precisions.append(hits / k)
    if not precisions:
        raise ValueError("query label absent from gallery")
    return sum(precisions) / len(precisions)


def rank1(ranked_labels_per_query, query_labels) -> float:
    hits = sum(1 for ranked, ql in zip(ranked_labels_per_query, query_labels) if ranked[0] == ql)
    return hits / len(query_labels)


def cosine_ranking(queries: np.ndarray, gallery: np.ndarray) -> list[list[int]]:
    """Per query, gallery indices sorted by (1 - cosine similarity, index)."""
    ranking = []
    for qv in queries:
        dists = []
        for gi, gv in enumerate(gallery):
            dot = sum(float(a) * float(b) for a, b in zip(qv, gv))
            norm = math.sqrt(sum(float(a) ** 2 for a in qv)) * math.sqrt(sum(float(b) ** 2 for b in gv))
            dists.append((1.0 - dot / norm, gi))
        ranking.append([gi for _, gi in sorted(dists)])
    return ranking
