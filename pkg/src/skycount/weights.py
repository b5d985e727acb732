"""Binary weight container ("ASPD" files).

Layout, all integers little-endian u32::

    magic "ASPD" | version | tensor_count
    per tensor: name_len | UTF-8 name | ndim | dims[ndim] | float32 payload (row-major)

Values are stored as float32 and widened to float64 on load.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from ._io import write_atomic
from .errors import BackboneImportError, FormatError
from .model import ModelConfig, ModelParams, backbone_layout, check_params
from .tensor import Tensor

MAGIC = b"ASPD"
VERSION = 1

PathLike = Union[str, os.PathLike]


def encode_tensors(tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> Dict[str, np.ndarray]:
    """Parse a container; errors name the byte offset and, when known, the tensor."""
    pos = 0

    def read(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated container while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if read(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an ASPD weight container", offset=0)
    version, count = struct.unpack("<II", read(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset=4)
    out: Dict[str, np.ndarray] = {}
    for k in range(count):
        (name_len,) = struct.unpack("<I", read(4, f"name length of tensor #{k}"))
        start = pos
        try:
            name = read(name_len, f"name of tensor #{k}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor #{k} has a non-UTF-8 name", offset=start) from None
        (ndim,) = struct.unpack("<I", read(4, f"ndim of tensor {name!r}"))
        dims = struct.unpack(f"<{ndim}I", read(4 * ndim, f"dims of tensor {name!r}"))
        if any(d == 0 for d in dims):
            raise FormatError(f"tensor {name!r} has a zero dimension", offset=pos - 4 * ndim)
        n = int(np.prod(dims)) if ndim else 1
        payload = read(4 * n, f"payload of tensor {name!r}")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=start)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after the last tensor", offset=pos)
    return out


def save_weights(params: Mapping[str, Tensor], path: PathLike) -> None:
    write_atomic(path, encode_tensors(params))


def load_weights(path: PathLike, config: Optional[ModelConfig] = None) -> ModelParams:
    """Read a container; with ``config`` the names and shapes are validated too."""
    arrays = decode_tensors(Path(path).read_bytes())
    params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    if config is not None:
        check_params(params, config)
    return params


def import_backbone(params: ModelParams, path: PathLike) -> ModelParams:
    """Replace the ``vgg.*`` tensors with those from a container; others are untouched."""
    source = decode_tensors(Path(path).read_bytes())
    wanted = [(name, t.shape) for name, t in params.items() if name.startswith("vgg.")]
    missing = [name for name, _ in wanted if name not in source]
    wrong = [f"{name} {source[name].shape} (expected {shape})" for name, shape in wanted
             if name in source and source[name].shape != shape]
    if missing or wrong:
        parts = []
        if missing:
            parts.append("missing: " + ", ".join(missing))
        if wrong:
            parts.append("misshaped: " + ", ".join(wrong))
        raise BackboneImportError("backbone import failed; " + "; ".join(parts))
    out = dict(params)
    for name, _ in wanted:
        out[name] = Tensor(source[name], requires_grad=True)
    return out


def canonical_backbone_shapes(config: Optional[ModelConfig] = None):
    """Names and shapes a backbone container must provide (VGG-16 by default)."""
    return [(s.name, s.shape) for s in backbone_layout(config or ModelConfig())]
