"""Synthetic blob images for tests, demos and the overfit check."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import ModelConfig, Variant
from .transforms import Sample


def blob_image(points: np.ndarray, height: int, width: int, blob_sigma: float = 1.5,
               rng: Optional[np.random.Generator] = None, noise: float = 0.02) -> np.ndarray:
    """Dark background with one bright Gaussian blob per (x, y) point."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    for x, y in points:
        img += np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * blob_sigma**2))
    img = np.clip(img, 0.0, 1.0)
    if rng is not None and noise > 0:
        img = np.clip(img + rng.normal(0.0, noise, size=img.shape), 0.0, 1.0)
    tint = np.array([1.0, 0.9, 0.8])
    return img[:, :, None] * tint


def blob_samples(n: int, size: int = 64, counts: Tuple[int, int] = (5, 20), margin: int = 8,
                 seed: int = 0, blob_sigma: float = 1.5) -> List[Sample]:
    """``n`` square images, each with a uniform number of blobs in ``counts``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = int(rng.integers(counts[0], counts[1] + 1))
        pts = rng.uniform(margin, size - margin, size=(k, 2))
        img = blob_image(pts, size, size, blob_sigma, rng)
        out.append(Sample(img, pts, f"blob_{i:03d}.png", "external"))
    return out


def tiny_config(variant=Variant.FULL, **overrides) -> ModelConfig:
    """Narrow version of the default architecture, same topology, for CPU-sized runs."""
    kw = dict(
        variant=Variant(variant),
        backbone_channels=(8, 8, 16, 16, 32, 32, 32, 32, 32, 32),
        spm_channels=16,
        midend_tail=((32, 2), (32, 2), (16, 2), (16, 2)),
        backend_deformable=(16, 16, 8),
        baseline_tail=((32, 2), (32, 2), (32, 2), (16, 2), (16, 2), (8, 2)),
    )
    kw.update(overrides)
    return ModelConfig(**kw)
