"""Convolution, pooling and bilinear sampling kernels with gradient rules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ShapeError, SpecError
from .tensor import Tensor, as_tensor

Pair = Union[int, Tuple[int, int]]


def _pair(v: Pair) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise SpecError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class Conv2dSpec:
    kernel_size: Tuple[int, int] = (3, 3)
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel_size", _pair(self.kernel_size))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if min(self.kernel_size) < 1 or min(self.stride) < 1 or self.dilation < 1:
            raise SpecError(f"kernel, stride and dilation must be >= 1: {self}")
        if min(self.padding) < 0:
            raise SpecError(f"padding must be >= 0: {self}")

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw), d = self.kernel_size, self.stride, self.padding, self.dilation
        ho = (height + 2 * ph - d * (kh - 1) - 1) // sh + 1
        wo = (width + 2 * pw - d * (kw - 1) - 1) // sw + 1
        if ho < 1 or wo < 1:
            raise SpecError(f"{self} gives non-positive output for a {height}x{width} input")
        return ho, wo


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: Pair = 1,
    padding: Pair = 0,
    dilation: int = 1,
    spec: Optional[Conv2dSpec] = None,
) -> Tensor:
    """Zero-padded 2-D cross-correlation, NCHW input and OIKK weight."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKK weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if spec is None:
        spec = Conv2dSpec((kh, kw), stride, padding, dilation)
    elif spec.kernel_size != (kh, kw):
        raise SpecError(f"spec kernel {spec.kernel_size} differs from weight kernel {(kh, kw)}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    ho, wo = spec.output_size(h, w)
    (sh, sw), (ph, pw), d = spec.stride, spec.padding, spec.dilation

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    wd = weight.data

    def window(i, j):
        r0, c0 = i * d, j * d
        return (slice(None), slice(None), slice(r0, r0 + sh * (ho - 1) + 1, sh),
                slice(c0, c0 + sw * (wo - 1) + 1, sw))

    acc = np.zeros((o, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(wd[:, :, i, j], xp[window(i, j)], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[window(i, j)] += np.tensordot(wd[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    gw[:, :, i, j] = np.tensordot(g, xp[window(i, j)], axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, window: Pair = 2, stride: Optional[Pair] = None) -> Tensor:
    """Max pooling with floor output size.

    Ties send the gradient to the first maximum in row-major window order.
    """
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects NCHW input, got {x.shape}")
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise SpecError(f"pool window {(kh, kw)} larger than input {(h, w)}")
    if min(kh, kw, sh, sw) < 1:
        raise SpecError("pool window and stride must be >= 1")
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    views = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    views = views[:, :, ::sh, ::sw][:, :, :ho, :wo].reshape(n, c, ho, wo, kh * kw)
    arg = views.argmax(axis=-1)
    out = np.take_along_axis(views, arg[..., None], axis=-1)[..., 0]

    rows = (np.arange(ho)[:, None] * sh + arg // kw)
    cols = (np.arange(wo)[None, :] * sw + arg % kw)
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    index = (ni[:, :, None, None], ci[:, :, None, None], rows, cols)
    overlapping = sh < kh or sw < kw

    def backward(g):
        gx = np.zeros_like(x.data)
        if overlapping:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def bilinear_sample(x: Tensor, ys: Tensor, xs: Tensor) -> Tensor:
    """Sample ``x`` (N, C, H, W) at fractional locations.

    ``ys`` and ``xs`` have shape (N, P) and hold row/column coordinates, with
    pixel (i, j) sitting at integer location (i, j). Neighbours outside the
    image read as zero, so a location contributes nothing once it is a full
    pixel outside. Returns (N, C, P); gradients reach ``x``, ``ys`` and ``xs``.
    """
    x, ys, xs = as_tensor(x), as_tensor(ys), as_tensor(xs)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_sample expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if ys.shape != xs.shape or ys.ndim != 2 or ys.shape[0] != n:
        raise ShapeError(f"locations must both be ({n}, P), got {ys.shape} and {xs.shape}")

    y, xx = ys.data, xs.data
    y0f, x0f = np.floor(y), np.floor(xx)
    ly, lx = y - y0f, xx - x0f
    y0, x0 = y0f.astype(np.int64), x0f.astype(np.int64)
    img = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # N, H, W, C
    nidx = np.arange(n)[:, None]

    corners = {}
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            yc, xc = np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)
            vals = img[nidx, yc, xc] * valid[..., None]  # N, P, C
            corners[dy, dx] = (yc, xc, valid, vals)

    wy = (1.0 - ly, ly)
    wx = (1.0 - lx, lx)
    out = np.zeros((n, ys.shape[1], c))
    for (dy, dx), (_, _, _, vals) in corners.items():
        out += (wy[dy] * wx[dx])[..., None] * vals

    def backward(g):
        gt = g.transpose(0, 2, 1)  # N, P, C
        gimg = gy = gxs = None
        if x.requires_grad:
            gimg = np.zeros_like(img)
            for (dy, dx), (yc, xc, valid, _) in corners.items():
                wgt = (wy[dy] * wx[dx] * valid)[..., None]
                np.add.at(gimg, (np.broadcast_to(nidx, yc.shape), yc, xc), gt * wgt)
            gimg = gimg.transpose(0, 3, 1, 2)
        v00, v01 = corners[0, 0][3], corners[0, 1][3]
        v10, v11 = corners[1, 0][3], corners[1, 1][3]
        if ys.requires_grad:
            dvy = wx[0][..., None] * (v10 - v00) + wx[1][..., None] * (v11 - v01)
            gy = (gt * dvy).sum(axis=-1)
        if xs.requires_grad:
            dvx = wy[0][..., None] * (v01 - v00) + wy[1][..., None] * (v11 - v10)
            gxs = (gt * dvx).sum(axis=-1)
        return gimg, gy, gxs

    return Tensor._result(np.ascontiguousarray(out.transpose(0, 2, 1)), (x, ys, xs), backward,
                          "bilinear_sample")


def sample_at(x: Tensor, location: Tuple[float, float]) -> Tensor:
    """Bilinear value of a C x H x W tensor at one (y, x) location, as a C-vector."""
    if x.ndim != 3:
        raise ShapeError(f"sample_at expects a C x H x W tensor, got {x.shape}")
    y, xx = location
    ys = as_tensor(y).reshape(1, 1) if isinstance(y, Tensor) else Tensor([[float(y)]])
    xs = as_tensor(xx).reshape(1, 1) if isinstance(xx, Tensor) else Tensor([[float(xx)]])
    out = bilinear_sample(x.reshape(1, *x.shape), ys, xs)
    return out.reshape(x.shape[0])
