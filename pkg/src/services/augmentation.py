"""
Augmentation Service - Positive Pairs for Contrastive Learning

Two independently sampled views per image: random resized crop (bilinear),
horizontal flip, brightness/contrast jitter and random grayscale. Randomness
for a batch derives from (seed, batch index) only, so batches can be
augmented in any order or in parallel with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.core.errors import AugmentationError
from src.core.seeding import substream

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)
LOG_RATIO = (float(np.log(3 / 4)), float(np.log(4 / 3)))


class AugmentationConfig(BaseModel):
    """Augmentation policy shared by training, detection and recovery."""

    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    jitter_strength: float = Field(default=0.4, ge=0.0)
    grayscale_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_crop_range(self) -> AugmentationConfig:
        lo, hi = self.crop_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        return self

    @classmethod
    def identity(cls, seed: int = 0) -> AugmentationConfig:
        return cls(
            crop_scale_range=(1.0, 1.0),
            flip_prob=0.0,
            jitter_strength=0.0,
            grayscale_prob=0.0,
            seed=seed,
        )


@dataclass
class ContrastiveBatch:
    """Views x_a and x_b; row n of both derives from the same source image."""

    view_a: np.ndarray
    view_b: np.ndarray

    @property
    def size(self) -> int:
        return int(self.view_a.shape[0])


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a (C, h, w) image with half-pixel-centred bilinear sampling."""
    _, in_h, in_w = image.shape
    if (in_h, in_w) == (height, width):
        return image.copy()
    ys = np.clip((np.arange(height, dtype=np.float32) + 0.5) * in_h / height - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(width, dtype=np.float32) + 0.5) * in_w / width - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


def _random_resized_crop(
    image: np.ndarray, scale_range: tuple[float, float], rng: np.random.Generator
) -> np.ndarray:
    _, height, width = image.shape
    scale = rng.uniform(*scale_range)
    log_ratio = rng.uniform(*LOG_RATIO)
    if scale >= 1.0:
        return image
    ratio = float(np.exp(log_ratio))
    crop_w = int(np.clip(round(np.sqrt(scale * ratio) * width), 1, width))
    crop_h = int(np.clip(round(np.sqrt(scale / ratio) * height), 1, height))
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    crop = image[:, top : top + crop_h, left : left + crop_w]
    return resize_bilinear(crop, height, width)


def _augment_one(image: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    out = _random_resized_crop(image, cfg.crop_scale_range, rng)
    if rng.random() < cfg.flip_prob:
        out = out[:, :, ::-1]
    if cfg.jitter_strength > 0:
        s = cfg.jitter_strength
        brightness = np.float32(rng.uniform(max(0.0, 1 - s), 1 + s))
        contrast = np.float32(rng.uniform(max(0.0, 1 - s), 1 + s))
        out = out * brightness
        mean = out.mean()
        out = (out - mean) * contrast + mean
    if rng.random() < cfg.grayscale_prob:
        gray = np.tensordot(GRAY_WEIGHTS, out, axes=(0, 0))
        out = np.broadcast_to(gray, out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_pair(
    images: np.ndarray, cfg: AugmentationConfig, batch_index: int = 0
) -> ContrastiveBatch:
    """
    Produce two independently augmented views of each image.

    Args:
        images: float pixels in [0, 1], shaped (N, C, H, W)
        cfg: Augmentation policy; cfg.seed roots the randomness
        batch_index: Index of this batch within its stream

    Raises:
        AugmentationError: empty batch or non-NCHW input
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4:
        raise AugmentationError(f"expected (N, C, H, W) images, got shape {images.shape}")
    if images.shape[0] == 0:
        raise AugmentationError("cannot augment an empty batch")
    if batch_index < 0:
        raise AugmentationError(f"batch_index must be non-negative, got {batch_index}")

    rng = substream(cfg.seed, "augment", batch_index)
    view_a = np.empty_like(images)
    view_b = np.empty_like(images)
    for n, image in enumerate(images):
        view_a[n] = _augment_one(image, cfg, rng)
        view_b[n] = _augment_one(image, cfg, rng)
    return ContrastiveBatch(view_a, view_b)
