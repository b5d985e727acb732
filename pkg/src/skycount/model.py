"""Network assembly: truncated VGG front-end, attention, scale pyramid, back-end.

Parameters are kept in a flat, ordered ``dict`` from layer path to tensor.
:func:`param_layout` is the single description of which names exist for a
config and with which shapes; building, validation and import all use it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, ShapeError, ValidationError
from .kernels import conv2d, max_pool2d
from .layers import (DEFAULT_ATTENTION_BUDGET, INIT_STD, SPM_RATES, AttentionArrangement,
                     ChannelAttentionParams, DeformableConvParams, SpatialAttentionParams,
                     SpmParams, attention_block, deformable_conv2d, reduced_channels,
                     spm_forward)
from .tensor import Tensor, no_grad, relu

ModelParams = Dict[str, Tensor]

VGG_LAYERS = ("conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3",
              "conv4_1", "conv4_2", "conv4_3")
VGG_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512)
_POOL_AFTER = {"conv1_2", "conv2_2", "conv3_3"}
DOWNSAMPLE = 8


class Variant(enum.Enum):
    BASELINE = "baseline"
    BASELINE_ATT = "baseline+att"
    BASELINE_ATT_SPM = "baseline+att+spm"
    FULL = "full"

    @property
    def has_attention(self) -> bool:
        return self is not Variant.BASELINE

    @property
    def has_spm(self) -> bool:
        return self in (Variant.BASELINE_ATT_SPM, Variant.FULL)


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.FULL
    attention_arrangement: AttentionArrangement = AttentionArrangement.CHANNEL_THEN_SPATIAL
    spm_rates: Tuple[int, ...] = SPM_RATES
    spm_channels: int = 512
    midend_tail: Tuple[Tuple[int, int], ...] = ((512, 2), (512, 2), (256, 2), (128, 2))
    backend_deformable: Tuple[int, ...] = (128, 64, 32)
    baseline_tail: Tuple[Tuple[int, int], ...] = ((512, 2), (512, 2), (512, 2), (256, 2),
                                                  (128, 2), (64, 2))
    backbone_channels: Tuple[int, ...] = VGG_CHANNELS
    input_channels: int = 3
    init_std: float = INIT_STD
    init_scheme: str = "gaussian"  # "gaussian" (fixed init_std) or "he" (fan-in scaled)
    attention_budget: int = DEFAULT_ATTENTION_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "attention_arrangement",
                           AttentionArrangement(self.attention_arrangement))
        object.__setattr__(self, "spm_rates", tuple(int(r) for r in self.spm_rates))
        object.__setattr__(self, "midend_tail", tuple((int(c), int(d)) for c, d in self.midend_tail))
        object.__setattr__(self, "baseline_tail",
                           tuple((int(c), int(d)) for c, d in self.baseline_tail))
        object.__setattr__(self, "backend_deformable", tuple(int(c) for c in self.backend_deformable))
        object.__setattr__(self, "backbone_channels", tuple(int(c) for c in self.backbone_channels))
        self.validate()

    def validate(self) -> None:
        if len(self.backbone_channels) != len(VGG_LAYERS):
            raise ValidationError(f"backbone needs {len(VGG_LAYERS)} channel counts, "
                                  f"got {len(self.backbone_channels)}")
        counts = [*self.backbone_channels, self.spm_channels, self.input_channels,
                  *self.backend_deformable, *(c for c, _ in self.midend_tail),
                  *(c for c, _ in self.baseline_tail)]
        if min(counts) < 1:
            raise ValidationError("channel counts must be positive")
        if min(d for _, d in (*self.midend_tail, *self.baseline_tail)) < 1 or min(self.spm_rates) < 1:
            raise ValidationError("dilation rates must be positive")
        if self.variant.has_attention and self.attention_arrangement is AttentionArrangement.NONE:
            raise ValidationError(f"variant {self.variant.value!r} needs an attention arrangement")
        if self.variant is Variant.FULL and not self.backend_deformable:
            raise ValidationError("the full variant needs at least one deformable layer")
        if self.variant.has_spm and not self.spm_rates:
            raise ValidationError("SPM needs at least one dilation rate")
        if self.init_std <= 0:
            raise ValidationError("init_std must be positive")
        if self.init_scheme not in ("gaussian", "he"):
            raise ValidationError(f"unknown init_scheme {self.init_scheme!r}")

    @property
    def arrangement(self) -> AttentionArrangement:
        if not self.variant.has_attention:
            return AttentionArrangement.NONE
        return self.attention_arrangement

    def with_variant(self, variant) -> "ModelConfig":
        return replace(self, variant=Variant(variant))


class LayerSpec(NamedTuple):
    name: str
    shape: Tuple[int, ...]
    init: str  # "he", "weight", "bias", "offset" or "zero"


def _conv(prefix: str, cout: int, cin: int, k: int, init: str = "weight") -> List[LayerSpec]:
    return [LayerSpec(f"{prefix}.weight", (cout, cin, k, k), init),
            LayerSpec(f"{prefix}.bias", (cout,), "bias")]


def backbone_layout(config: ModelConfig) -> List[LayerSpec]:
    out, cin = [], config.input_channels
    for name, cout in zip(VGG_LAYERS, config.backbone_channels):
        out += _conv(f"vgg.{name}", cout, cin, 3, "he")
        cin = cout
    return out


def param_layout(config: ModelConfig) -> List[LayerSpec]:
    """Every parameter of ``config`` in creation order."""
    out = backbone_layout(config)
    c = config.backbone_channels[-1]
    arr = config.arrangement
    if arr.uses_channel:
        out += _conv("att.channel", c, c, 1)
        out.append(LayerSpec("att.channel.lam", (1,), "zero"))
    if arr.uses_spatial:
        r = reduced_channels(c)
        for part, cout in (("query", r), ("key", r), ("value", c)):
            out += [LayerSpec(f"att.spatial.{part}_weight", (cout, c, 1, 1), "weight"),
                    LayerSpec(f"att.spatial.{part}_bias", (cout,), "bias")]
        out.append(LayerSpec("att.spatial.mu", (1,), "zero"))

    if config.variant.has_spm:
        for rate in config.spm_rates:
            out += _conv(f"spm.branch_d{rate}", config.spm_channels, c, 3)
        out += _conv("spm.fuse", c, config.spm_channels * len(config.spm_rates), 1)
        tail = config.midend_tail
    else:
        tail = config.baseline_tail
    for i, (cout, _) in enumerate(tail, 1):
        out += _conv(f"mid.conv{i}", cout, c, 3)
        c = cout

    if config.variant.has_spm:
        for i, cout in enumerate(config.backend_deformable, 1):
            if config.variant is Variant.FULL:
                out += _conv(f"back.dconv{i}", cout, c, 3)
                out += [LayerSpec(f"back.dconv{i}.offset_weight", (18, c, 3, 3), "offset"),
                        LayerSpec(f"back.dconv{i}.offset_bias", (18,), "offset")]
            else:
                out += _conv(f"back.conv{i}", cout, c, 3)
            c = cout
    out += _conv("head", 1, c, 1)
    return out


def build_model(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters for ``config``.

    Without a pretrained import the backbone uses He-normal weights. Other
    weights are Gaussian with ``config.init_std``, or He-normal as well when
    ``init_scheme == "he"`` (useful for narrow networks, where a fixed small
    std makes activations vanish). Biases, attention scales and deformable
    offset predictors start at zero.
    """
    params: ModelParams = {}
    he_everywhere = config.init_scheme == "he"
    for spec in param_layout(config):
        if spec.init == "he" or (spec.init == "weight" and he_everywhere):
            fan_in = int(np.prod(spec.shape[1:]))
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.shape)
        elif spec.init == "weight":
            data = rng.normal(0.0, config.init_std, size=spec.shape)
        else:
            data = np.zeros(spec.shape)
        params[spec.name] = Tensor(data, requires_grad=True)
    return params


def count_parameters(params: ModelParams) -> int:
    return int(sum(t.size for t in params.values()))


def check_params(params: ModelParams, config: ModelConfig) -> None:
    """Raise ValidationError unless ``params`` has exactly the layout of ``config``."""
    expected = {s.name: s.shape for s in param_layout(config)}
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    wrong = [f"{n}: {params[n].shape} != {s}" for n, s in expected.items()
             if n in params and params[n].shape != s]
    problems = []
    if missing:
        problems.append("missing " + ", ".join(missing))
    if extra:
        problems.append("unexpected " + ", ".join(extra))
    if wrong:
        problems.append("misshaped " + "; ".join(wrong))
    if problems:
        raise ValidationError("parameters do not match config: " + " | ".join(problems))


def _c(params, prefix, x, **kw):
    return conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], **kw)


def frontend(params: ModelParams, x: Tensor) -> Tensor:
    for name in VGG_LAYERS:
        x = relu(_c(params, f"vgg.{name}", x, padding=1))
        if name in _POOL_AFTER:
            x = max_pool2d(x, 2)
    return x


def forward(params: ModelParams, config: ModelConfig, image: Tensor) -> Tensor:
    """Density map (N, 1, H/8, W/8) for an (N, C, H, W) image batch."""
    if image.ndim != 4 or image.shape[1] != config.input_channels:
        raise ShapeError(f"expected N x {config.input_channels} x H x W input, got {image.shape}")
    h, w = image.shape[2:]
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ContractError(f"input {h}x{w} is not divisible by {DOWNSAMPLE}; pad it first")

    x = frontend(params, image)
    arr = config.arrangement
    channel = ChannelAttentionParams.from_named(params, "att.channel") if arr.uses_channel else None
    spatial = SpatialAttentionParams.from_named(params, "att.spatial") if arr.uses_spatial else None
    x = attention_block(x, arr, channel, spatial, config.attention_budget)

    if config.variant.has_spm:
        x = spm_forward(x, SpmParams.from_named(params, "spm", config.spm_rates))
        tail = config.midend_tail
    else:
        tail = config.baseline_tail
    for i, (_, rate) in enumerate(tail, 1):
        x = relu(_c(params, f"mid.conv{i}", x, padding=rate, dilation=rate))

    if config.variant.has_spm:
        for i in range(1, len(config.backend_deformable) + 1):
            if config.variant is Variant.FULL:
                x = relu(deformable_conv2d(x, DeformableConvParams.from_named(params, f"back.dconv{i}")))
            else:
                x = relu(_c(params, f"back.conv{i}", x, padding=1))
    return _c(params, "head", x)


class Count(NamedTuple):
    raw: float
    clamped: float


def predict_count(params: ModelParams, config: ModelConfig, image: Tensor) -> Count:
    """Integrated density of a single image; ``clamped`` floors the raw sum at 0."""
    with no_grad():
        dmap = forward(params, config, image)
    raw = float(dmap.data.sum())
    return Count(raw, max(raw, 0.0))


def infer_config(params: ModelParams, **overrides) -> ModelConfig:
    """Reconstruct the architecture from parameter names and shapes.

    The order of a two-attention arrangement is not recoverable; it defaults
    to channel-then-spatial unless passed in ``overrides``.
    """
    try:
        backbone = tuple(params[f"vgg.{n}.weight"].shape[0] for n in VGG_LAYERS)
        input_channels = params["vgg.conv1_1.weight"].shape[1]
    except KeyError as exc:
        raise ValidationError(f"not an ASPD parameter set: missing {exc.args[0]}") from None
    has_c = "att.channel.weight" in params
    has_s = "att.spatial.value_weight" in params
    has_spm = "spm.fuse.weight" in params
    has_dconv = "back.dconv1.weight" in params
    if has_dconv:
        variant = Variant.FULL
    elif has_spm:
        variant = Variant.BASELINE_ATT_SPM
    elif has_c or has_s:
        variant = Variant.BASELINE_ATT
    else:
        variant = Variant.BASELINE
    if has_c and has_s:
        arrangement = AttentionArrangement.CHANNEL_THEN_SPATIAL
    elif has_c:
        arrangement = AttentionArrangement.CHANNEL_ONLY
    elif has_s:
        arrangement = AttentionArrangement.SPATIAL_ONLY
    else:
        arrangement = AttentionArrangement.CHANNEL_THEN_SPATIAL

    kw = dict(variant=variant, attention_arrangement=arrangement, backbone_channels=backbone,
              input_channels=input_channels)
    tail = []
    i = 1
    while f"mid.conv{i}.weight" in params:
        tail.append(params[f"mid.conv{i}.weight"].shape[0])
        i += 1
    overrides = dict(overrides)
    if has_spm:
        rates = sorted(int(k.split(".")[1][len("branch_d"):]) for k in params
                       if k.startswith("spm.branch_d") and k.endswith(".weight"))
        rates = tuple(overrides.pop("spm_rates", rates))
        kw["spm_rates"] = rates
        kw["spm_channels"] = params[f"spm.branch_d{rates[0]}.weight"].shape[0]
        dil = [d for _, d in overrides.pop("midend_tail", ())] or [2] * len(tail)
        kw["midend_tail"] = tuple(zip(tail, dil))
        prefix = "back.dconv" if has_dconv else "back.conv"
        back = []
        j = 1
        while f"{prefix}{j}.weight" in params:
            back.append(params[f"{prefix}{j}.weight"].shape[0])
            j += 1
        kw["backend_deformable"] = tuple(back)
    else:
        dil = [d for _, d in overrides.pop("baseline_tail", ())] or [2] * len(tail)
        kw["baseline_tail"] = tuple(zip(tail, dil))
    kw.update(overrides)
    config = ModelConfig(**kw)
    check_params(params, config)
    return config
