"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from mbanet.tensor_core.tensor import Tensor


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d fn / d arr by central differences; ``arr`` is perturbed in place and restored."""
    if not arr.flags.c_contiguous:
        raise ValueError("numerical_grad perturbs in place and needs a C-contiguous array")
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), or the absolute gap when both are ~0."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    gap = float(np.linalg.norm(analytic - numeric))
    return gap if denom < 1e-12 else gap / denom


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    seed: int = 0,
) -> dict[int, float]:
    """Compare backward() against finite differences for every tensor in ``inputs``.

    ``fn`` must rebuild the graph from the current contents of ``inputs`` each
    call. Its (possibly non-scalar) output is contracted with a fixed random
    weighting so that every output element contributes. Returns the relative
    error per input index.
    """
    out = fn()
    weights = np.random.default_rng(seed).normal(size=out.shape)

    def scalar() -> float:
        return float(np.sum(fn().data * weights))

    for t in inputs:
        t.grad = None
    loss = fn()
    (loss * Tensor(weights, dtype=loss.dtype)).sum().backward()
    errors = {}
    for k, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[k] = relative_error(analytic, numerical_grad(scalar, t.data, step))
    return errors
