"""Ground-truth density maps from point annotations.

Pixel (row i, column j) sits at image coordinate (x=j, y=i). Each point
adds an isotropic Gaussian, truncated at ``radius`` and never renormalised.
Mass falling outside the image is dropped.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._io import write_atomic
from .errors import AnnotationError, FormatError, ShapeError

DEFAULT_SIGMA = 15.0
DMAP_MAGIC = b"DMAP"
_HEADER = struct.Struct("<4sIIf")


@dataclass
class DensityMap:
    values: np.ndarray
    sigma: float = DEFAULT_SIGMA
    downsample: int = 1

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> float:
        return float(self.values.sum())


def default_radius(sigma: float) -> int:
    return int(math.ceil(4 * sigma))


def gaussian_kernel(sigma: float, radius: Optional[int] = None) -> np.ndarray:
    """(2r+1) x (2r+1) samples of the unit-mass 2-D Gaussian, centre at [r, r]."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = default_radius(sigma) if radius is None else int(radius)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma**2))
    return g / (2 * math.pi * sigma**2)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 2))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise AnnotationError(f"points must be an (n, 2) array of (x, y), got shape {pts.shape}")
    return pts


def generate_density_map(points, height: int, width: int, sigma: float = DEFAULT_SIGMA,
                         radius: Optional[int] = None) -> DensityMap:
    """Sum of one truncated Gaussian per (x, y) point, evaluated at pixel centres.

    The footprint of a point spans ``radius`` pixels around its nearest pixel
    and each value is the Gaussian at the exact sub-pixel offset.
    """
    pts = _as_points(points)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = default_radius(sigma) if radius is None else int(radius)
    out = np.zeros((height, width))
    norm = 1.0 / (2 * math.pi * sigma**2)
    span = np.arange(-radius, radius + 1)
    for k, (x, y) in enumerate(pts):
        if not (np.isfinite(x) and np.isfinite(y) and 0 <= x < width and 0 <= y < height):
            raise AnnotationError(f"point #{k} ({x}, {y}) lies outside the {width}x{height} image")
        cx, cy = int(round(x)), int(round(y))
        cols = cx + span
        rows = cy + span
        cols = cols[(cols >= 0) & (cols < width)]
        rows = rows[(rows >= 0) & (rows < height)]
        gx = np.exp(-((cols - x) ** 2) / (2 * sigma**2))
        gy = np.exp(-((rows - y) ** 2) / (2 * sigma**2))
        out[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] += norm * np.outer(gy, gx)
    return DensityMap(out, float(sigma), 1)


def downsample_preserving_count(dmap: DensityMap, factor: int = 8) -> DensityMap:
    """Block-sum ``factor`` x ``factor`` cells so the total mass is unchanged."""
    v = dmap.values
    h, w = v.shape
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} map is not divisible by {factor}")
    blocks = v.reshape(h // factor, factor, w // factor, factor)
    return DensityMap(blocks.sum(axis=(1, 3)), dmap.sigma, dmap.downsample * factor)


# -- files ---------------------------------------------------------------------


def encode_dmap(dmap: DensityMap) -> bytes:
    header = _HEADER.pack(DMAP_MAGIC, dmap.height, dmap.width, float(dmap.sigma))
    return header + np.ascontiguousarray(dmap.values, dtype="<f4").tobytes()


def decode_dmap(buf: bytes) -> DensityMap:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated density-map header", offset=len(buf))
    magic, h, w, sigma = _HEADER.unpack_from(buf)
    if magic != DMAP_MAGIC:
        raise FormatError("bad magic, not a DMAP file", offset=0)
    if h == 0 or w == 0:
        raise FormatError(f"density map has an empty {h}x{w} grid", offset=4)
    need = _HEADER.size + 4 * h * w
    if len(buf) != need:
        raise FormatError(f"payload size mismatch: expected {need} bytes, file has {len(buf)}",
                          offset=min(len(buf), need))
    values = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(h, w)
    return DensityMap(values.astype(np.float64), float(sigma), 1)


def save_dmap(dmap: DensityMap, path) -> None:
    write_atomic(path, encode_dmap(dmap))


def load_dmap(path) -> DensityMap:
    return decode_dmap(Path(path).read_bytes())


def preview_image(dmap: DensityMap) -> np.ndarray:
    """Min-max normalised uint8 rendering, for looking at only."""
    v = dmap.values
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.round((v - lo) / (hi - lo) * 255).astype(np.uint8)


def save_preview(dmap: DensityMap, path) -> None:
    from PIL import Image

    Image.fromarray(preview_image(dmap), mode="L").save(path)
