"""Image decoding and the train/eval preprocessing pipelines.

Both pipelines return float32 arrays shaped ``[3, crop, crop]`` in RGB
channel order, normalized per channel as ``(pixel / 255 - mean) / std``.
"""

from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from mbanet.errors import ConfigError, DataError

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class AugmentationConfig:
    resize: int = 356
    crop: int = 324
    flip_p: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    crop_mode: str = "random"

    def __post_init__(self):
        self.mean = tuple(float(m) for m in self.mean)
        self.std = tuple(float(s) for s in self.std)
        if self.crop > self.resize:
            raise ConfigError(f"crop {self.crop} larger than resize {self.resize}")
        if self.crop_mode not in ("random", "center"):
            raise ConfigError(f"crop_mode must be 'random' or 'center', got {self.crop_mode!r}")
        if len(self.mean) != 3 or len(self.std) != 3 or min(self.std) <= 0:
            raise ConfigError("mean/std need three entries with positive std")


def load_image(path) -> np.ndarray:
    """Decode to ``uint8 [H, W, 3]``; grayscale is expanded with a warning."""
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "I", "F", "1"):
                warnings.warn(f"{path}: grayscale image expanded to RGB", stacklevel=2)
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


class ImageSource:
    """Decoded-image loader with a bounded LRU cache keyed on path."""

    def __init__(self, max_cached: int = 256):
        self.max_cached = max_cached
        self._cache: OrderedDict = OrderedDict()

    def load(self, path) -> np.ndarray:
        key = str(path)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        img = load_image(Path(path))
        if self.max_cached:
            self._cache[key] = img
            if len(self._cache) > self.max_cached:
                self._cache.popitem(last=False)
        return img


def resize(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[:2] == (size, size):
        return img.astype(np.float32) / 255.0
    out = Image.fromarray(img).resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / 255.0


def normalize(img: np.ndarray, cfg: AugmentationConfig) -> np.ndarray:
    """``[H, W, 3]`` in [0, 1] -> normalized ``[3, H, W]`` float32."""
    out = (img - np.array(cfg.mean, dtype=np.float32)) / np.array(cfg.std, dtype=np.float32)
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=np.float32)


def flip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1]


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    """Apply multiplicative factors in the fixed order brightness, contrast, saturation."""
    img = np.clip(img * brightness, 0.0, 1.0)
    gray_mean = float((img @ GRAY_WEIGHTS).mean())
    img = np.clip((img - gray_mean) * contrast + gray_mean, 0.0, 1.0)
    gray = (img @ GRAY_WEIGHTS)[..., None]
    return np.clip((img - gray) * saturation + gray, 0.0, 1.0).astype(np.float32)


def augment_train(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Resize, random crop, random horizontal flip, color jitter, normalize.

    Exactly six values are drawn from ``rng`` per call whatever the
    configuration, so the stream stays aligned across settings.
    """
    big = resize(img, cfg.resize)
    span = cfg.resize - cfg.crop
    top, left = (int(v) for v in rng.integers(0, span + 1, size=2))
    do_flip = rng.random() < cfg.flip_p
    factors = rng.uniform(-1.0, 1.0, size=3)
    if cfg.crop_mode == "center":
        top = left = span // 2
    out = big[top:top + cfg.crop, left:left + cfg.crop]
    if do_flip:
        out = flip(out)
    if cfg.brightness or cfg.contrast or cfg.saturation:
        out = color_jitter(
            out,
            1.0 + cfg.brightness * factors[0],
            1.0 + cfg.contrast * factors[1],
            1.0 + cfg.saturation * factors[2],
        )
    return normalize(out, cfg)


def prepare_eval(img: np.ndarray, cfg: AugmentationConfig) -> np.ndarray:
    """Resize straight to the crop size and normalize; no randomness."""
    return normalize(resize(img, cfg.crop), cfg)


def image_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-image generator so batch composition and prefetch order cannot change draws."""
    return np.random.default_rng([seed, epoch, index])
