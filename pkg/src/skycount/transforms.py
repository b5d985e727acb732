"""Samples and the geometric transforms used for training data.

Images are float arrays of shape (H, W, 3) with values in [0, 1]. Points are
(x, y) with pixel (i, j) at x=j, y=i, and must satisfy 0 <= x < W, 0 <= y < H.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .annotations import PointRecord, sample_id
from .errors import AnnotationError, ShapeError

SUBSETS = ("building", "small-vehicle", "large-vehicle", "ship", "external")
LARGE_IMAGE_TARGET = (1024, 768)  # width, height


@dataclass
class Sample:
    image: np.ndarray
    points: np.ndarray
    path: str = ""
    subset: str = "external"
    pad: Tuple[int, int] = (0, 0)  # rows added at the bottom, columns at the right

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"image must be H x W x 3, got {img.shape}")
        self.image = img
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 2) if pts.size else np.zeros((0, 2))
        if self.subset not in SUBSETS:
            raise AnnotationError(f"unknown subset {self.subset!r}, expected one of {SUBSETS}")
        h, w = img.shape[:2]
        if self.points.size:
            x, y = self.points[:, 0], self.points[:, 1]
            bad = ~((x >= 0) & (x < w) & (y >= 0) & (y < h))
            if bad.any():
                k = int(np.argmax(bad))
                raise AnnotationError(f"{self.path or 'sample'}: point #{k} {tuple(self.points[k])} "
                                      f"outside the {w}x{h} image")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def id(self) -> str:
        return sample_id(self.path) if self.path else ""


# -- image files -----------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Decode PNG / JPEG / PGM / PPM into an (H, W, 3) float array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            arr = arr / (65535.0 if arr.max() > 255 else 255.0)
            return np.repeat(arr[:, :, None], 3, axis=2)
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def image_size(path) -> Tuple[int, int]:
    """(height, width) without decoding the pixels."""
    from PIL import Image

    with Image.open(path) as im:
        w, h = im.size
    return h, w


def save_image(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_sample(record: PointRecord, base_dir=".", subset: str = "external") -> Sample:
    path = Path(base_dir) / record.image
    return Sample(load_image(path), record.points, str(record.image), subset)


# -- transforms ----------------------------------------------------------------


def crop(sample: Sample, top: int, left: int, height: int, width: int) -> Sample:
    """Sub-image [top, top+height) x [left, left+width); points outside are dropped."""
    pts = sample.points
    keep = ((pts[:, 0] >= left) & (pts[:, 0] < left + width)
            & (pts[:, 1] >= top) & (pts[:, 1] < top + height))
    moved = pts[keep] - np.array([left, top], dtype=np.float64)
    img = sample.image[top:top + height, left:left + width]
    return replace(sample, image=img.copy(), points=moved, pad=(0, 0))


def quadrant_origins(height: int, width: int) -> List[Tuple[int, int]]:
    h, w = height // 2, width // 2
    return [(0, 0), (0, w), (h, 0), (h, w)]


def crop_nine(sample: Sample, rng: np.random.Generator) -> List[Sample]:
    """Four quadrant crops followed by five uniformly placed ones, each H/2 x W/2."""
    H, W = sample.height, sample.width
    if H < 2 or W < 2:
        raise ShapeError(f"cannot take half-size crops of a {W}x{H} image")
    h, w = H // 2, W // 2
    crops = [crop(sample, t, l, h, w) for t, l in quadrant_origins(H, W)]
    for _ in range(5):
        t = int(rng.integers(0, H - h + 1))
        l = int(rng.integers(0, W - w + 1))
        crops.append(crop(sample, t, l, h, w))
    return crops


def mirror_flip(sample: Sample) -> Sample:
    """Horizontal flip: x -> W - 1 - x (floored at 0 for x in (W-1, W))."""
    W = sample.width
    pts = sample.points.copy()
    if pts.size:
        pts[:, 0] = np.maximum(W - 1 - pts[:, 0], 0.0)
    return replace(sample, image=sample.image[:, ::-1].copy(), points=pts)


def augment(samples: Iterable[Sample], rng: np.random.Generator) -> List[Sample]:
    """Nine crops per sample, each kept plain and mirrored: 18 outputs per input."""
    out = []
    for s in samples:
        for c in crop_nine(s, rng):
            out.append(c)
            out.append(mirror_flip(c))
    return out


def resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    from PIL import Image

    chans = [np.asarray(Image.fromarray(np.ascontiguousarray(image[:, :, c], dtype=np.float32),
                                        mode="F").resize((width, height), Image.BILINEAR),
                        dtype=np.float64)
             for c in range(image.shape[2])]
    return np.stack(chans, axis=2)


def resize_with_points(sample: Sample, target: Tuple[int, int] = LARGE_IMAGE_TARGET) -> Sample:
    """Bilinear resize to ``target`` = (width, height) when the image is larger in either axis."""
    tw, th = int(target[0]), int(target[1])
    if tw < 1 or th < 1:
        raise ShapeError(f"resize target must be positive, got {target}")
    H, W = sample.height, sample.width
    if W <= tw and H <= th:
        return sample
    pts = sample.points * np.array([tw / W, th / H]) if sample.points.size else sample.points
    if pts.size:
        # float rounding can land a point scaled from just under W exactly on tw
        pts = np.minimum(pts, np.nextafter(np.array([tw, th], dtype=np.float64), 0))
    return replace(sample, image=resize_image(sample.image, tw, th), points=pts)


def pad_to_multiple(sample: Sample, multiple: int = 8) -> Sample:
    """Zero-pad bottom/right up to the next multiple; the padding is recorded."""
    H, W = sample.height, sample.width
    ph, pw = (-H) % multiple, (-W) % multiple
    if not ph and not pw:
        return sample
    img = np.pad(sample.image, ((0, ph), (0, pw), (0, 0)))
    return replace(sample, image=img, pad=(sample.pad[0] + ph, sample.pad[1] + pw))


def to_tensor_batch(samples: Sequence[Sample]) -> np.ndarray:
    """Stack same-size samples into an (N, 3, H, W) array."""
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeError(f"batch images differ in size: {sorted(shapes)}")
    return np.stack([s.image.transpose(2, 0, 1) for s in samples])
