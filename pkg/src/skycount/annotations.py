"""Annotation formats: oriented quads, point files and split manifests.

Quad files hold one object per line::

    x1 y1 x2 y2 x3 y3 x4 y4 class difficulty

optionally preceded by ``imagesource:`` / ``gsd:`` metadata lines.

Point files hold one JSON object per line::

    {"image": "img_0001.png", "points": [[12.5, 40.0], [100.25, 3.0]]}

Split manifests are ``id<TAB>role`` lines with role ``train`` or ``test``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ._io import write_atomic
from .errors import AnnotationError, ParseError

logger = logging.getLogger(__name__)

QUAD_METADATA_KEYS = ("imagesource", "gsd")
ROLES = ("train", "test")


@dataclass
class QuadAnnotation:
    vertices: Tuple[Tuple[float, float], ...]
    label: str = "object"
    difficult: int = 0

    def __post_init__(self):
        self.vertices = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(self.vertices) != 4:
            raise AnnotationError(f"a quad needs 4 vertices, got {len(self.vertices)}")


def centroid(quad: QuadAnnotation) -> Tuple[float, float]:
    """Mean of the four vertices."""
    xs = [v[0] for v in quad.vertices]
    ys = [v[1] for v in quad.vertices]
    if not all(math.isfinite(v) for v in xs + ys):
        raise AnnotationError(f"quad {quad.vertices} has a non-finite vertex")
    return sum(xs) / 4.0, sum(ys) / 4.0


@dataclass
class QuadParseResult:
    quads: List[QuadAnnotation] = field(default_factory=list)
    rejects: List[ParseError] = field(default_factory=list)


def parse_quad_file(text: str, image_size: Optional[Tuple[int, int]] = None) -> QuadParseResult:
    """Parse quad records; bad lines go to ``rejects`` with their line numbers.

    With ``image_size`` as (height, width), vertices outside the image are
    clipped to it with a warning.
    """
    result = QuadParseResult()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        head = stripped.split(":", 1)[0].strip().lower()
        if ":" in stripped and head in QUAD_METADATA_KEYS:
            continue
        fields = stripped.split()
        numbers = []
        for tok in fields[:8]:
            try:
                numbers.append(float(tok))
            except ValueError:
                break
        if len(numbers) < 8:
            result.rejects.append(ParseError(
                f"expected 8 vertex coordinates, found {len(numbers)}: {stripped!r}", lineno))
            continue
        if not all(math.isfinite(v) for v in numbers):
            result.rejects.append(ParseError(f"non-finite coordinate: {stripped!r}", lineno))
            continue
        rest = fields[8:]
        label = rest[0] if rest else "object"
        difficult = 0
        if len(rest) > 1:
            try:
                difficult = int(rest[1])
            except ValueError:
                result.rejects.append(ParseError(f"difficulty must be an integer: {rest[1]!r}", lineno))
                continue
        pts = [(numbers[i], numbers[i + 1]) for i in range(0, 8, 2)]
        if image_size is not None:
            h, w = image_size
            clipped = [(min(max(x, 0.0), w - 1.0), min(max(y, 0.0), h - 1.0)) for x, y in pts]
            if clipped != pts:
                logger.warning("line %d: quad vertices clipped to the %dx%d image", lineno, w, h)
            pts = clipped
        result.quads.append(QuadAnnotation(tuple(pts), label, difficult))
    return result


# -- point files ---------------------------------------------------------------


@dataclass
class PointRecord:
    image: str
    points: np.ndarray  # (n, 2) float64, columns x, y

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 2) if pts.size else np.zeros((0, 2))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


def format_point_record(rec: PointRecord) -> str:
    return json.dumps({"image": rec.image, "points": rec.points.tolist()})


def write_pointfile(records: Iterable[PointRecord], path) -> None:
    write_atomic(path, "".join(format_point_record(r) + "\n" for r in records))


def parse_pointfile(text: str) -> List[PointRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict) or not isinstance(obj.get("image"), str):
            raise ParseError("record needs a string 'image' field", lineno)
        pts = obj.get("points")
        if not isinstance(pts, list) or not all(
            isinstance(p, list) and len(p) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)
            for p in pts
        ):
            raise ParseError("'points' must be a list of [x, y] number pairs", lineno)
        arr = np.asarray(pts, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ParseError("non-finite point coordinate", lineno)
        records.append(PointRecord(obj["image"], arr))
    return records


def read_pointfile(path) -> List[PointRecord]:
    return parse_pointfile(Path(path).read_text(encoding="utf-8"))


# -- split manifests -------------------------------------------------------------


@dataclass
class SplitManifest:
    entries: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for sid, role in self.entries:
            if role not in ROLES:
                raise AnnotationError(f"sample {sid!r}: role must be one of {ROLES}, got {role!r}")
            if sid in seen:
                raise AnnotationError(f"sample {sid!r} listed twice")
            seen.add(sid)

    def ids(self, role: str) -> List[str]:
        return [sid for sid, r in self.entries if r == role]

    def counts(self) -> Tuple[int, int]:
        return len(self.ids("train")), len(self.ids("test"))


def parse_manifest(text: str) -> SplitManifest:
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 'id<TAB>role', got {line!r}", lineno)
        sid, role = parts[0].strip(), parts[1].strip()
        if role not in ROLES:
            raise ParseError(f"role must be one of {ROLES}, got {role!r}", lineno)
        if sid in seen:
            raise ParseError(f"sample {sid!r} listed twice", lineno)
        seen.add(sid)
        entries.append((sid, role))
    return SplitManifest(entries)


def format_manifest(manifest: SplitManifest) -> str:
    return "".join(f"{sid}\t{role}\n" for sid, role in manifest.entries)


def read_manifest(path) -> SplitManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(manifest: SplitManifest, path) -> None:
    write_atomic(path, format_manifest(manifest))


def sample_id(image: str) -> str:
    """Manifest id of an image reference: its file stem."""
    return Path(image).stem


def count_statistics(counts: Sequence[int]) -> dict:
    """Images / Total / Min / Average / Max over per-image instance counts."""
    if not counts:
        raise AnnotationError("no images to summarise")
    return {
        "images": len(counts),
        "total": int(sum(counts)),
        "min": int(min(counts)),
        "average": float(sum(counts)) / len(counts),
        "max": int(max(counts)),
    }
