"""INI-style run configuration for the command line.

Example::

    [model]
    variant = full
    arrangement = channel+spatial
    preset = tiny

    [train]
    lr = 1e-5
    batch = 1
    epochs = 400
    seed = 0

    [data]
    points = points.txt
    manifest = split.txt
    sigma = 15

    [io]
    checkpoint_dir = ckpt
    log_path = loss.log

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .density import DEFAULT_SIGMA
from .errors import ConfigError, ValidationError
from .model import ModelConfig
from .synthetic import tiny_config
from .train import TrainConfig

KNOWN = {
    "model": {"variant", "arrangement", "preset", "spm_rates", "spm_channels", "midend_tail",
              "backend_deformable", "baseline_tail", "backbone_channels", "init_std",
              "init_scheme"},
    "train": {"lr", "batch", "epochs", "seed", "checkpoint_every"},
    "data": {"points", "manifest", "image_dir", "resize", "sigma", "augment", "subset"},
    "io": {"checkpoint_dir", "log_path", "weights"},
}
_PATH_KEYS = {("data", "points"), ("data", "manifest"), ("data", "image_dir"),
              ("io", "checkpoint_dir"), ("io", "log_path"), ("io", "weights")}


@dataclass
class DataConfig:
    points: Optional[Path] = None
    manifest: Optional[Path] = None
    image_dir: Optional[Path] = None
    resize: bool = True
    sigma: float = DEFAULT_SIGMA
    augment: bool = False
    subset: str = "external"


@dataclass
class IoConfig:
    checkpoint_dir: Optional[Path] = None
    log_path: Optional[Path] = None
    weights: Optional[Path] = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IoConfig = field(default_factory=IoConfig)


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return lineno
        elif current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return lineno
    return 0


def _ints(value: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in value.replace(",", " ").split())


def _pairs(value: str) -> Tuple[Tuple[int, int], ...]:
    out = []
    for item in value.replace(",", " ").split():
        c, _, d = item.partition(":")
        out.append((int(c), int(d) if d else 2))
    return tuple(out)


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_run_config(text: str, base_dir=".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    base = Path(base_dir)
    values: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in KNOWN:
            raise ConfigError(f"line {_line_of(text, section)}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in KNOWN[section]:
                line = _line_of(text, section, key)
                raise ConfigError(f"line {line}: unknown key {key!r} in [{section}]")
            values.setdefault(section, {})[key] = value.strip()

    def get(section, key):
        return values.get(section, {}).get(key)

    def convert(section, key, fn):
        raw = get(section, key)
        if raw is None:
            return None
        try:
            return fn(raw)
        except (ValueError, TypeError) as exc:
            line = _line_of(text, section, key)
            raise ConfigError(f"line {line}: bad value for {key}: {exc}") from None

    def path(section, key):
        raw = get(section, key)
        return None if raw is None else (base / raw)

    m = {}
    mapping = {
        "variant": ("variant", str), "arrangement": ("attention_arrangement", str),
        "spm_rates": ("spm_rates", _ints), "spm_channels": ("spm_channels", int),
        "midend_tail": ("midend_tail", _pairs), "backend_deformable": ("backend_deformable", _ints),
        "baseline_tail": ("baseline_tail", _pairs), "backbone_channels": ("backbone_channels", _ints),
        "init_std": ("init_std", float), "init_scheme": ("init_scheme", str),
    }
    for key, (attr, fn) in mapping.items():
        v = convert("model", key, fn)
        if v is not None:
            m[attr] = v
    preset = (get("model", "preset") or "default").lower()
    try:
        if preset == "tiny":
            model = tiny_config(**{"init_scheme": "he", **m})
        elif preset == "default":
            model = ModelConfig(**m)
        else:
            raise ConfigError(f"line {_line_of(text, 'model', 'preset')}: unknown preset {preset!r}")
    except (ValueError, ValidationError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [model] section: {exc}") from None

    t = {}
    for key, attr, fn in (("lr", "learning_rate", float), ("batch", "batch_size", int),
                          ("epochs", "max_epochs", int), ("seed", "seed", int),
                          ("checkpoint_every", "checkpoint_every", int)):
        v = convert("train", key, fn)
        if v is not None:
            t[attr] = v
    io = IoConfig(path("io", "checkpoint_dir"), path("io", "log_path"), path("io", "weights"))
    try:
        train = TrainConfig(**t, checkpoint_dir=str(io.checkpoint_dir) if io.checkpoint_dir else None,
                            log_path=str(io.log_path) if io.log_path else None)
    except Exception as exc:
        raise ConfigError(f"invalid [train] section: {exc}") from None

    data = DataConfig(
        points=path("data", "points"),
        manifest=path("data", "manifest"),
        image_dir=path("data", "image_dir"),
        resize=convert("data", "resize", _bool) if get("data", "resize") is not None else True,
        sigma=convert("data", "sigma", float) or DEFAULT_SIGMA,
        augment=convert("data", "augment", _bool) or False,
        subset=get("data", "subset") or "external",
    )
    if not data.sigma > 0:
        raise ConfigError(f"line {_line_of(text, 'data', 'sigma')}: sigma must be positive")
    return RunConfig(model, train, data, io)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(encoding="utf-8"), path.parent)
