"""Label-smoothed cross-entropy and the summed three-branch objective."""

from __future__ import annotations

import numpy as np

from mbanet.errors import ShapeError
from mbanet.tensor_core import functional as F
from mbanet.tensor_core.tensor import Tensor

SMOOTHING_VARIANTS = ("uniform", "others")


def smoothed_targets(labels, num_classes: int, eps: float, variant: str = "uniform", dtype=np.float32) -> np.ndarray:
    """Target distributions ``[B, N]``.

    ``uniform``: true class ``1 - eps + eps/N``, every class gets ``eps/N``.
    ``others``: true class ``1 - eps``, each other class ``eps/(N-1)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    if variant == "uniform":
        off, on = eps / num_classes, 1.0 - eps + eps / num_classes
    elif variant == "others":
        off = eps / (num_classes - 1) if num_classes > 1 else 0.0
        on = 1.0 - eps if num_classes > 1 else 1.0
    else:
        raise ValueError(f"unknown smoothing variant {variant!r}")
    targets = np.full((labels.size, num_classes), off, dtype=dtype)
    targets[np.arange(labels.size), labels] = on
    return targets


def smoothed_cross_entropy(logits: Tensor, labels, eps: float = 0.1, variant: str = "uniform") -> Tensor:
    """Batch mean of ``-sum(target * log_softmax(logits))``."""
    if logits.ndim != 2 or len(np.atleast_1d(labels)) != logits.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {len(np.atleast_1d(labels))} labels")
    targets = smoothed_targets(labels, logits.shape[1], eps, variant, logits.dtype)
    return -(F.log_softmax(logits) * Tensor(targets)).sum() / logits.shape[0]


def total_loss(logits, labels, eps: float = 0.1, variant: str = "uniform") -> Tensor:
    """Unweighted sum of the per-branch smoothed cross-entropies.

    ``logits`` is a mapping branch -> logits or a sequence of logits.
    """
    parts = list(logits.values()) if isinstance(logits, dict) else list(logits)
    if not parts or len({p.shape[0] for p in parts}) != 1:
        raise ShapeError("branch logits must be non-empty with equal batch sizes")
    loss = smoothed_cross_entropy(parts[0], labels, eps, variant)
    for part in parts[1:]:
        loss = loss + smoothed_cross_entropy(part, labels, eps, variant)
    return loss
