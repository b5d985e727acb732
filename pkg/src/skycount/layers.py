"""Attention, scale-pyramid and deformable-convolution blocks.

Each block's parameters live in a small dataclass of tensors that can be
flattened into (and rebuilt from) the model's name -> tensor map.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, ResourceError, ShapeError
from .kernels import bilinear_sample, conv2d
from .tensor import (Tensor, add, concat_channels, matmul, mul, relu, reshape, scale,
                     softmax, swapaxes, take)

INIT_STD = 0.01
SPM_RATES = (2, 4, 8, 12)
# Bytes allowed for the batch of HW x HW spatial affinity maps.
DEFAULT_ATTENTION_BUDGET = 512 * 2**20


class AttentionArrangement(enum.Enum):
    NONE = "none"
    SPATIAL_ONLY = "spatial"
    CHANNEL_ONLY = "channel"
    PARALLEL = "parallel"
    SPATIAL_THEN_CHANNEL = "spatial+channel"
    CHANNEL_THEN_SPATIAL = "channel+spatial"

    @property
    def uses_channel(self) -> bool:
        return self not in (AttentionArrangement.NONE, AttentionArrangement.SPATIAL_ONLY)

    @property
    def uses_spatial(self) -> bool:
        return self not in (AttentionArrangement.NONE, AttentionArrangement.CHANNEL_ONLY)


def init_layer_params(shape, rng: np.random.Generator, kind: str = "weight",
                      std: float = INIT_STD) -> Tensor:
    """Fresh parameter tensor.

    ``kind`` is ``"weight"`` (Gaussian, standard deviation ``std``),
    ``"bias"`` or ``"offset"`` (both exactly zero). Offset predictors start at
    zero so a deformable layer begins as a plain convolution.
    """
    shape = tuple(int(s) for s in shape)
    if kind == "weight":
        data = rng.normal(0.0, std, size=shape)
    elif kind in ("bias", "offset"):
        data = np.zeros(shape)
    else:
        raise ValueError(f"unknown parameter kind {kind!r}")
    return Tensor(data, requires_grad=True)


class _ParamGroup:
    """Mixin: flatten dataclass tensor fields to ``prefix.field`` names."""

    def named(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_named(cls, params: Mapping[str, Tensor], prefix: str):
        try:
            return cls(**{f.name: params[f"{prefix}.{f.name}"] for f in dataclasses.fields(cls)})
        except KeyError as exc:
            raise ContractError(f"missing parameter {exc.args[0]}") from None


def _batched(f: Tensor) -> Tuple[Tensor, bool]:
    if f.ndim == 3:
        return reshape(f, (1, *f.shape)), True
    if f.ndim != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {f.shape}")
    return f, False


# -- channel attention ---------------------------------------------------------


@dataclass
class ChannelAttentionParams(_ParamGroup):
    weight: Tensor  # C x C x 1 x 1, shared projection giving C1 and C2
    bias: Tensor
    lam: Tensor  # residual scale, shape (1,)

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, std: float = INIT_STD):
        return cls(
            weight=init_layer_params((channels, channels, 1, 1), rng, std=std),
            bias=init_layer_params((channels,), rng, "bias"),
            lam=Tensor(np.zeros(1), requires_grad=True),
        )


def channel_attention_map(f: Tensor, params: ChannelAttentionParams) -> Tensor:
    """C x C affinity: row j is a softmax over i of C1_i . C2_j."""
    f, _ = _batched(f)
    n, c, h, w = f.shape
    if params.weight.shape[1] != c:
        raise ShapeError(f"channel attention built for {params.weight.shape[1]} channels, got {c}")
    proj = reshape(conv2d(f, params.weight, params.bias), (n, c, h * w))
    energy = matmul(proj, swapaxes(proj, 1, 2))
    # energy is symmetric, so energy[j, i] == C1_i . C2_j already sits in row j.
    return softmax(energy, axis=-1)


def channel_attention(f: Tensor, params: ChannelAttentionParams) -> Tensor:
    fb, squeeze = _batched(f)
    n, c, h, w = fb.shape
    attn = channel_attention_map(fb, params)
    mixed = matmul(attn, reshape(fb, (n, c, h * w)))
    out = add(mul(params.lam, reshape(mixed, fb.shape)), fb)
    return reshape(out, f.shape) if squeeze else out


# -- spatial attention -----------------------------------------------------------


def reduced_channels(channels: int) -> int:
    return max(1, channels // 8)


@dataclass
class SpatialAttentionParams(_ParamGroup):
    query_weight: Tensor  # C/8 x C x 1 x 1 -> S1
    query_bias: Tensor
    key_weight: Tensor  # C/8 x C x 1 x 1 -> S2
    key_bias: Tensor
    value_weight: Tensor  # C x C x 1 x 1 -> S3
    value_bias: Tensor
    mu: Tensor

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, std: float = INIT_STD):
        r = reduced_channels(channels)
        return cls(
            query_weight=init_layer_params((r, channels, 1, 1), rng, std=std),
            query_bias=init_layer_params((r,), rng, "bias"),
            key_weight=init_layer_params((r, channels, 1, 1), rng, std=std),
            key_bias=init_layer_params((r,), rng, "bias"),
            value_weight=init_layer_params((channels, channels, 1, 1), rng, std=std),
            value_bias=init_layer_params((channels,), rng, "bias"),
            mu=Tensor(np.zeros(1), requires_grad=True),
        )


def spatial_attention_map(f: Tensor, params: SpatialAttentionParams,
                          memory_budget: int = DEFAULT_ATTENTION_BUDGET) -> Tensor:
    """HW x HW affinity: row j is a softmax over pixels i of S1_i . S2_j."""
    f, _ = _batched(f)
    n, c, h, w = f.shape
    if params.value_weight.shape[1] != c:
        raise ShapeError(f"spatial attention built for {params.value_weight.shape[1]} channels, got {c}")
    need = n * (h * w) ** 2 * 8
    if need > memory_budget:
        raise ResourceError(
            f"spatial attention on {h}x{w} features needs {need / 2**20:.0f} MiB for the "
            f"affinity map, over the {memory_budget / 2**20:.0f} MiB budget; downscale the "
            f"input or raise memory_budget")
    hw = h * w
    s1 = reshape(conv2d(f, params.query_weight, params.query_bias), (n, -1, hw))
    s2 = reshape(conv2d(f, params.key_weight, params.key_bias), (n, -1, hw))
    energy = matmul(swapaxes(s2, 1, 2), s1)  # [j, i] = S2_j . S1_i
    return softmax(energy, axis=-1)


def spatial_attention(f: Tensor, params: SpatialAttentionParams,
                      memory_budget: int = DEFAULT_ATTENTION_BUDGET) -> Tensor:
    fb, squeeze = _batched(f)
    n, c, h, w = fb.shape
    attn = spatial_attention_map(fb, params, memory_budget)
    s3 = reshape(conv2d(fb, params.value_weight, params.value_bias), (n, c, h * w))
    mixed = matmul(s3, swapaxes(attn, 1, 2))  # column j = sum_i S_a[j, i] S3_i
    out = add(mul(params.mu, reshape(mixed, fb.shape)), fb)
    return reshape(out, f.shape) if squeeze else out


def attention_block(f: Tensor, arrangement: AttentionArrangement,
                    channel: Optional[ChannelAttentionParams] = None,
                    spatial: Optional[SpatialAttentionParams] = None,
                    memory_budget: int = DEFAULT_ATTENTION_BUDGET) -> Tensor:
    arrangement = AttentionArrangement(arrangement)
    if arrangement.uses_channel and channel is None:
        raise ContractError(f"arrangement {arrangement.value!r} needs channel-attention params")
    if arrangement.uses_spatial and spatial is None:
        raise ContractError(f"arrangement {arrangement.value!r} needs spatial-attention params")
    A = AttentionArrangement
    if arrangement is A.NONE:
        return f
    if arrangement is A.CHANNEL_ONLY:
        return channel_attention(f, channel)
    if arrangement is A.SPATIAL_ONLY:
        return spatial_attention(f, spatial, memory_budget)
    if arrangement is A.CHANNEL_THEN_SPATIAL:
        return spatial_attention(channel_attention(f, channel), spatial, memory_budget)
    if arrangement is A.SPATIAL_THEN_CHANNEL:
        return channel_attention(spatial_attention(f, spatial, memory_budget), channel)
    both = add(channel_attention(f, channel), spatial_attention(f, spatial, memory_budget))
    return scale(both, 0.5)


# -- scale pyramid -----------------------------------------------------------------


@dataclass
class SpmParams:
    branch_weights: Sequence[Tensor]
    branch_biases: Sequence[Tensor]
    fuse_weight: Tensor
    fuse_bias: Tensor
    rates: Tuple[int, ...] = SPM_RATES

    @classmethod
    def init(cls, in_channels: int, branch_channels: int, rng: np.random.Generator,
             rates: Sequence[int] = SPM_RATES, std: float = INIT_STD):
        rates = tuple(int(r) for r in rates)
        return cls(
            branch_weights=[init_layer_params((branch_channels, in_channels, 3, 3), rng, std=std)
                            for _ in rates],
            branch_biases=[init_layer_params((branch_channels,), rng, "bias") for _ in rates],
            fuse_weight=init_layer_params((in_channels, branch_channels * len(rates), 1, 1), rng,
                                          std=std),
            fuse_bias=init_layer_params((in_channels,), rng, "bias"),
            rates=rates,
        )

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out = {}
        for rate, w, b in zip(self.rates, self.branch_weights, self.branch_biases):
            out[f"{prefix}.branch_d{rate}.weight"] = w
            out[f"{prefix}.branch_d{rate}.bias"] = b
        out[f"{prefix}.fuse.weight"] = self.fuse_weight
        out[f"{prefix}.fuse.bias"] = self.fuse_bias
        return out

    @classmethod
    def from_named(cls, params: Mapping[str, Tensor], prefix: str, rates: Sequence[int]):
        try:
            return cls(
                branch_weights=[params[f"{prefix}.branch_d{r}.weight"] for r in rates],
                branch_biases=[params[f"{prefix}.branch_d{r}.bias"] for r in rates],
                fuse_weight=params[f"{prefix}.fuse.weight"],
                fuse_bias=params[f"{prefix}.fuse.bias"],
                rates=tuple(rates),
            )
        except KeyError as exc:
            raise ContractError(f"missing parameter {exc.args[0]}") from None


def spm_branches(f: Tensor, params: SpmParams) -> list:
    """ReLU outputs of the parallel dilated 3x3 branches (padding = rate)."""
    return [relu(conv2d(f, w, b, padding=r, dilation=r))
            for r, w, b in zip(params.rates, params.branch_weights, params.branch_biases)]


def spm_forward(f: Tensor, params: SpmParams) -> Tensor:
    fb, squeeze = _batched(f)
    if params.fuse_weight.shape[0] != fb.shape[1] or params.branch_weights[0].shape[1] != fb.shape[1]:
        raise ShapeError(f"SPM built for {params.branch_weights[0].shape[1]} channels, "
                         f"input has {fb.shape[1]}")
    fused = relu(conv2d(concat_channels(spm_branches(fb, params)), params.fuse_weight,
                        params.fuse_bias))
    return reshape(fused, f.shape) if squeeze else fused


# -- deformable convolution ----------------------------------------------------


@dataclass
class DeformableConvParams(_ParamGroup):
    weight: Tensor  # O x C x 3 x 3
    bias: Tensor
    offset_weight: Tensor  # 2*9 x C x 3 x 3, channel 2k is dy and 2k+1 is dx of tap k
    offset_bias: Tensor

    @classmethod
    def init(cls, in_channels: int, out_channels: int, rng: np.random.Generator,
             kernel: int = 3, std: float = INIT_STD):
        taps = kernel * kernel
        return cls(
            weight=init_layer_params((out_channels, in_channels, kernel, kernel), rng, std=std),
            bias=init_layer_params((out_channels,), rng, "bias"),
            offset_weight=init_layer_params((2 * taps, in_channels, kernel, kernel), rng, "offset"),
            offset_bias=init_layer_params((2 * taps,), rng, "offset"),
        )


def sampling_grid(height: int, width: int, kernel: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """Undeformed (taps, H*W) row and column coordinates, padding kernel // 2."""
    half = kernel // 2
    ki, kj = np.divmod(np.arange(kernel * kernel), kernel)
    rows, cols = np.divmod(np.arange(height * width), width)
    return (rows[None, :] + ki[:, None] - half).astype(np.float64), \
           (cols[None, :] + kj[:, None] - half).astype(np.float64)


def deformable_offsets(x: Tensor, params: DeformableConvParams) -> Tensor:
    """Per-location offsets as (N, taps, 2, H*W): [:, k, 0] is dy, [:, k, 1] is dx."""
    n, _, h, w = x.shape
    k = params.offset_weight.shape[0] // 2
    pad = params.offset_weight.shape[2] // 2
    raw = conv2d(x, params.offset_weight, params.offset_bias, padding=pad)
    return reshape(raw, (n, k, 2, h * w))


def deformable_conv2d(x: Tensor, params: DeformableConvParams) -> Tensor:
    """Stride-1, same-size deformable convolution.

    Each tap k of the kernel reads ``x`` at ``p + p_k + offset_k(p)`` by
    bilinear interpolation, then the taps are weighted like a normal conv.
    """
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    o, ci, kh, kw = params.weight.shape
    if ci != c:
        raise ShapeError(f"deformable conv expects {ci} channels, got {c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"deformable conv needs an odd square kernel, got {kh}x{kw}")
    if params.offset_weight.shape[0] != 2 * kh * kw:
        raise ShapeError(f"offset predictor must output {2 * kh * kw} channels, "
                         f"got {params.offset_weight.shape[0]}")
    taps = kh * kw
    offsets = deformable_offsets(xb, params)
    base_y, base_x = sampling_grid(h, w, kh)
    ys = reshape(add(take(offsets, (slice(None), slice(None), 0)), base_y), (n, taps * h * w))
    xs = reshape(add(take(offsets, (slice(None), slice(None), 1)), base_x), (n, taps * h * w))
    cols = reshape(bilinear_sample(xb, ys, xs), (n, c * taps, h * w))
    out = matmul(reshape(params.weight, (o, c * taps)), cols)
    out = add(reshape(out, (n, o, h, w)), reshape(params.bias, (1, o, 1, 1)))
    return reshape(out, (o, h, w)) if squeeze else out
