"""Synthetic identity images: each identity is a colored, striped blob on its own background."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _identity_params(rng: np.random.Generator, k: int, n: int) -> dict:
    hue = (k + rng.uniform(-0.2, 0.2)) / n
    return {
        "blob": np.array(_hsv_to_rgb(hue % 1.0, 0.8, 0.9)),
        "background": rng.uniform(0.05, 0.5, size=3),
        "center": rng.uniform(0.3, 0.7, size=2),
        "radius": rng.uniform(0.18, 0.32),
        "angle": rng.uniform(0, np.pi),
        "freq": rng.uniform(2.0, 6.0),
    }


def _hsv_to_rgb(h: float, s: float, v: float):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def render_identity_image(params: dict, size: int, rng: np.random.Generator) -> np.ndarray:
    """One ``uint8 [size, size, 3]`` sample with per-image shift, scale and noise."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = params["center"] + rng.normal(0, 0.04, size=2)
    radius = params["radius"] * rng.uniform(0.9, 1.1)
    dist = np.hypot(yy - cy, xx - cx)
    blob = (dist < radius)[..., None]
    phase = (xx * np.cos(params["angle"]) + yy * np.sin(params["angle"])) * params["freq"] * 2 * np.pi
    stripes = 0.75 + 0.25 * np.sign(np.sin(phase))[..., None]
    img = np.where(blob, params["blob"] * stripes, params["background"])
    img = img * rng.uniform(0.9, 1.1) + rng.normal(0, 0.03, img.shape)
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def make_synthetic_dataset(root, num_identities: int = 10, images_per_identity: int = 10,
                           size: int = 40, seed: int = 0) -> Path:
    """Write ``root/id_XXX/img_YYY.png`` and return ``root``."""
    root = Path(root)
    rng = np.random.default_rng([seed, 2024])
    for k in range(num_identities):
        params = _identity_params(rng, k, num_identities)
        folder = root / f"id_{k:03d}"
        folder.mkdir(parents=True, exist_ok=True)
        for j in range(images_per_identity):
            img = render_identity_image(params, size, rng)
            Image.fromarray(img).save(folder / f"img_{j:03d}.png")
    return root
