"""Dense and deformable 2-D convolution with analytic backward passes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError
from .tensor import Tensor, apply_op


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride, self.dilation) < 1:
            raise ShapeError(f"invalid conv spec {self}")
        if self.padding < 0:
            raise ShapeError(f"negative padding in {self}")

    def output_size(self, h: int, w: int) -> tuple:
        kh, kw = self.kernel
        ho = (h + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv output {ho}x{wo} < 1 for input {h}x{w} and {self}")
        return ho, wo


def _check(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec):
    kh, kw = spec.kernel
    want = (spec.out_channels, spec.in_channels, kh, kw)
    if weight.dims != want:
        raise ShapeError(f"weight dims {weight.dims} != {want}")
    if x.data.ndim != 4 or x.dims[1] != spec.in_channels:
        raise ShapeError(f"input dims {x.dims} do not carry {spec.in_channels} channels")
    if bias is not None and bias.dims != (spec.out_channels,):
        raise ShapeError(f"bias dims {bias.dims} != ({spec.out_channels},)")
    return spec.output_size(*x.dims[2:])


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    """View of the padded input as (C, kh, kw, N, Ho, Wo)."""
    n, c = xp.shape[:2]
    kh, kw = spec.kernel
    sn, sc, sh, sw = xp.strides
    d, s = spec.dilation, spec.stride
    return as_strided(xp, (c, kh, kw, n, ho, wo), (sc, sh * d, sw * d, sn, sh * s, sw * s), writeable=False)


def _scatter_windows(gcols: np.ndarray, spec: ConvSpec, x_shape: tuple, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_windows` followed by un-padding."""
    n, c, h, w = x_shape
    p, d, s = spec.padding, spec.dilation, spec.stride
    kh, kw = spec.kernel
    gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i * d:i * d + s * (ho - 1) + 1:s, j * d:j * d + s * (wo - 1) + 1:s] += \
                gcols[:, i, j].transpose(1, 0, 2, 3)
    return gxp[:, :, p:p + h, p:p + w] if p else gxp


def _bias_out(out2: np.ndarray, bias: Tensor | None, n: int, ho: int, wo: int) -> np.ndarray:
    o = out2.shape[0]
    if bias is not None:
        out2 += bias.data[:, None]
    return out2.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation of an N×C×H×W input with an O×C×kh×kw kernel."""
    ho, wo = _check(x, weight, bias, spec)
    n, c, h, w = x.dims
    kh, kw = spec.kernel
    o = spec.out_channels
    pointwise = (kh, kw) == (1, 1) and spec.stride == 1 and spec.padding == 0
    if pointwise:
        cols = x.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    else:
        cols = _windows(_pad(x.data, spec.padding), spec, ho, wo).reshape(c * kh * kw, n * ho * wo)
    w2 = weight.data.reshape(o, -1)
    out = _bias_out(w2 @ cols, bias, n, ho, wo)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.dims)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gcols = w2.T @ g2
            if pointwise:
                gx = gcols.reshape(c, n, h, w).transpose(1, 0, 2, 3)
            else:
                gx = _scatter_windows(gcols.reshape(c, kh, kw, n, ho, wo), spec, x.dims, ho, wo)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return apply_op(np.ascontiguousarray(out), parents, backward)


# ------------------------------------------------------------------ bilinear


def bilinear_sample(feature_map, x: float, y: float) -> float:
    """Bilinear value of a 2-D map at column ``x``, row ``y``.

    Neighbours outside the map contribute zero, so far-away samples are 0.
    """
    m = np.asarray(feature_map)
    h, w = m.shape
    x0, y0 = math.floor(x), math.floor(y)
    lx, ly = x - x0, y - y0
    total = 0.0
    for yy, wy in ((y0, 1.0 - ly), (y0 + 1, ly)):
        for xx, wx in ((x0, 1.0 - lx), (x0 + 1, lx)):
            if 0 <= yy < h and 0 <= xx < w and wy * wx != 0.0:
                total += wy * wx * float(m[yy, xx])
    return total


def _bilinear_taps(py: np.ndarray, px: np.ndarray, h: int, w: int):
    """Neighbour indices and weights for sampling points of any shape.

    Returns four (flat_index, weight, d_weight/dy, d_weight/dx) tuples; invalid
    neighbours get index 0 and zero weights.
    """
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly, lx = py - y0, px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    taps = []
    for dy, wy, dwy in ((0, 1.0 - ly, -1.0), (1, ly, 1.0)):
        for dx, wx, dwx in ((0, 1.0 - lx, -1.0), (1, lx, 1.0)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = np.where(valid, yy * w + xx, 0)
            taps.append((idx, np.where(valid, wy * wx, 0.0),
                         np.where(valid, dwy * wx, 0.0), np.where(valid, wy * dwx, 0.0)))
    return taps


def deformable_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, offsets: Tensor,
                      spec: ConvSpec) -> Tensor:
    """Convolution whose taps sample the input at learned fractional offsets.

    ``offsets`` is N×(2·kh·kw)×Ho×Wo holding (dy, dx) per kernel tap in
    row-major tap order.  Gradients flow to input, weight, bias and offsets.
    """
    ho, wo = _check(x, weight, bias, spec)
    n, c, h, w = x.dims
    kh, kw = spec.kernel
    k = kh * kw
    o = spec.out_channels
    if offsets.dims != (n, 2 * k, ho, wo):
        raise ShapeError(f"offset dims {offsets.dims} != {(n, 2 * k, ho, wo)}")
    dt = x.dtype
    off = offsets.data.reshape(n, k, 2, ho, wo)
    ti, tj = np.divmod(np.arange(k), kw)
    base_y = (np.arange(ho) * spec.stride - spec.padding)[None, None, :, None] + \
        (ti * spec.dilation)[None, :, None, None]
    base_x = (np.arange(wo) * spec.stride - spec.padding)[None, None, None, :] + \
        (tj * spec.dilation)[None, :, None, None]
    py = base_y + off[:, :, 0]
    px = base_x + off[:, :, 1]
    taps = _bilinear_taps(py, px, h, w)

    # per-image flat index into a (C, N*H*W) layout
    shift = (np.arange(n) * h * w)[:, None, None, None]
    xf = x.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    gathered = [xf[:, (idx + shift).reshape(-1)] for idx, *_ in taps]
    cols = sum(g * wt.reshape(-1).astype(dt) for g, (_, wt, _, _) in zip(gathered, taps))
    # cols: (C, N*K*Ho*Wo) -> (C*K, N*Ho*Wo)
    cols_ck = cols.reshape(c, n, k, ho * wo).transpose(0, 2, 1, 3).reshape(c * k, n * ho * wo)
    w2 = weight.data.reshape(o, c * k)
    out = _bias_out(w2 @ cols_ck, bias, n, ho, wo)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        gx = gw = gb = goff = None
        if weight.requires_grad:
            gw = (g2 @ cols_ck.T).reshape(weight.dims)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad or offsets.requires_grad:
            gcols = (w2.T @ g2).reshape(c, k, n, ho * wo).transpose(0, 2, 1, 3).reshape(c, -1)
        if x.requires_grad:
            gxf = np.zeros((c, n * h * w), dtype=dt)
            for idx, wt, _, _ in taps:
                flat = (idx + shift).reshape(-1)
                np.add.at(gxf, (slice(None), flat), gcols * wt.reshape(-1).astype(dt))
            gx = gxf.reshape(c, n, h, w).transpose(1, 0, 2, 3)
        if offsets.requires_grad:
            dy = sum(gv * t[2].reshape(-1).astype(dt) for gv, t in zip(gathered, taps))
            dx = sum(gv * t[3].reshape(-1).astype(dt) for gv, t in zip(gathered, taps))
            goy = (gcols * dy).sum(axis=0).reshape(n, k, ho, wo)
            gox = (gcols * dx).sum(axis=0).reshape(n, k, ho, wo)
            goff = np.stack([goy, gox], axis=2).reshape(n, 2 * k, ho, wo)
        return (gx, gw, gb, goff) if bias is not None else (gx, gw, goff)

    parents = (x, weight, bias, offsets) if bias is not None else (x, weight, offsets)
    return apply_op(np.ascontiguousarray(out), parents, backward)
