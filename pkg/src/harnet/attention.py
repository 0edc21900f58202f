"""Spatial, channel and aligned attention blocks.

* spatial: a stack of 3x3 dilated convolutions ending in a one-channel
  sigmoid mask that re-weights every position of a feature map;
* channel: cross-level group normalisation (CLGN) with a per-group affine,
  and cross-level squeeze-and-excitation (CLSE) producing one channel weight
  vector shared by all pyramid levels;
* aligned: a residual 1x1 -> deformable 3x3 -> 1x1 bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conv import ConvSpec, conv2d, deformable_conv2d
from .errors import ShapeError
from .params import NetParams
from .structures import as_levels
from .tensor import Tensor, apply_op


def _normal(rng, shape, std, dtype):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype))


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype))


def _register(params: NetParams, prefix: str, named: dict) -> None:
    for name, t in named.items():
        params.add(f"{prefix}.{name}", t)


# ------------------------------------------------------------------ spatial


@dataclass
class SpatialAttentionParams:
    weights: list
    biases: list
    dilations: tuple = (1, 2, 5, 2, 1)

    def __post_init__(self):
        d = list(self.dilations)
        if len(d) != len(self.weights) or len(d) != len(self.biases):
            raise ShapeError(f"{len(d)} dilations for {len(self.weights)} conv layers")
        if d != d[::-1]:
            raise ShapeError(f"dilation schedule {d} is not symmetric")
        # symmetric, so rising up to the middle means unimodal
        mid = len(d) // 2
        if any(a > b for a, b in zip(d[:mid], d[1:mid + 1])):
            raise ShapeError(f"dilation schedule {d} is not unimodal")
        if self.weights[-1].dims[0] != 1:
            raise ShapeError("last spatial-attention layer must have one output channel")

    @classmethod
    def init(cls, in_channels, channels=16, dilations=(1, 2, 5, 2, 1), rng=None, std=0.01,
             dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        ws, bs = [], []
        cin = in_channels
        for i in range(len(dilations)):
            cout = 1 if i == len(dilations) - 1 else channels
            ws.append(_normal(rng, (cout, cin, 3, 3), std, dtype))
            bs.append(_zeros((cout,), dtype))
            cin = cout
        return cls(ws, bs, tuple(dilations))

    def named(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"conv{i}.w"], out[f"conv{i}.b"] = w, b
        return out

    @classmethod
    def from_params(cls, params: NetParams, prefix: str, dilations):
        n = len(dilations)
        return cls([params[f"{prefix}.conv{i}.w"] for i in range(n)],
                   [params[f"{prefix}.conv{i}.b"] for i in range(n)], tuple(dilations))


def spatial_attention_forward(features: Tensor, params: SpatialAttentionParams) -> Tensor:
    """N×C×H×W -> N×1×H×W mask in (0, 1); every layer keeps the spatial size."""
    x = features
    last = len(params.weights) - 1
    for i, (w, b, d) in enumerate(zip(params.weights, params.biases, params.dilations)):
        spec = ConvSpec(w.dims[1], w.dims[0], (3, 3), 1, d, d)
        x = conv2d(x, w, b, spec)
        x = T.sigmoid(x) if i == last else T.relu(x)
    return x


def apply_spatial_attention(mask: Tensor, features: Tensor) -> Tensor:
    return T.scale_spatial(mask, features)


# ------------------------------------------------------------------ channel


@dataclass
class CLGNParams:
    gamma: Tensor
    beta: Tensor
    group_size: int = 16
    eps: float = 1e-5

    @classmethod
    def init(cls, channels, group_size=16, eps=1e-5, dtype=np.float32):
        if channels % group_size:
            raise ShapeError(f"{channels} channels not divisible by group size {group_size}")
        g = channels // group_size
        return cls(Tensor(np.ones(g, dtype=dtype)), _zeros((g,), dtype), group_size, eps)

    def named(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    @classmethod
    def from_params(cls, params, prefix, group_size=16, eps=1e-5):
        return cls(params[f"{prefix}.gamma"], params[f"{prefix}.beta"], group_size, eps)


def _group_rms_affine(x: Tensor, gamma: Tensor, beta: Tensor, group_size: int, eps: float) -> Tensor:
    """x: N×C×S (all levels flattened along S); normalise each (image, group)."""
    n, c, s = x.dims
    g = c // group_size
    xg = x.data.reshape(n, g, group_size * s)
    m = xg.shape[2]
    r = np.sqrt((xg * xg).sum(axis=2, keepdims=True) / m + eps)
    y = xg / r
    gam = gamma.data[None, :, None]
    out = (gam * y + beta.data[None, :, None]).reshape(n, c, s)

    def backward(gout):
        go = gout.reshape(n, g, group_size * s)
        gb = go.sum(axis=(0, 2)) if beta.requires_grad else None
        ggam = (go * y).sum(axis=(0, 2)) if gamma.requires_grad else None
        gx = None
        if x.requires_grad:
            gy = go * gam
            gx = ((gy - y * (gy * y).sum(axis=2, keepdims=True) / m) / r).reshape(n, c, s)
        return gx, ggam, gb

    return apply_op(out, (x, gamma, beta), backward)


def clgn_normalize(level_features, params: CLGNParams) -> list:
    """Group RMS normalisation computed jointly over all pyramid levels.

    For every image and every group of ``group_size`` channels one root mean
    square is taken over the group's channels, all positions and all levels;
    members are divided by sqrt(mean_square + eps), then scaled by the
    group's gamma and shifted by its beta.
    """
    levels = as_levels(level_features)
    if not levels:
        raise ShapeError("clgn_normalize needs at least one level")
    n, c = levels[0].dims[:2]
    for lv in levels:
        if lv.data.ndim != 4 or lv.dims[:2] != (n, c):
            raise ShapeError(f"level dims {lv.dims} inconsistent with N={n}, C={c}")
    if c % params.group_size or params.gamma.dims != (c // params.group_size,):
        raise ShapeError(f"{c} channels vs group size {params.group_size} and gamma {params.gamma.dims}")
    sizes = [lv.dims[2] * lv.dims[3] for lv in levels]
    flat = T.concat([T.reshape(lv, (n, c, s)) for lv, s in zip(levels, sizes)], axis=2)
    normed = _group_rms_affine(flat, params.gamma, params.beta, params.group_size, params.eps)
    out, start = [], 0
    for lv, s in zip(levels, sizes):
        out.append(T.reshape(T.take(normed, 2, start, start + s), lv.dims))
        start += s
    return out


@dataclass
class CLSEBranch:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class CLSEParams:
    """Squeeze/excite weights per task ("cls", "bbox")."""

    branches: dict = field(default_factory=dict)

    @classmethod
    def init(cls, channels, num_levels, reduction=8, tasks=("cls", "bbox"), rng=None, std=0.01,
             dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        concat = channels * num_levels
        r_dim = max(1, concat // reduction)
        branches = {t: CLSEBranch(_normal(rng, (r_dim, concat), std, dtype), _zeros((r_dim,), dtype),
                                  _normal(rng, (channels, r_dim), std, dtype), _zeros((channels,), dtype))
                    for t in tasks}
        return cls(branches)

    def named(self) -> dict:
        out = {}
        for task, br in self.branches.items():
            for k in ("w1", "b1", "w2", "b2"):
                out[f"{task}.{k}"] = getattr(br, k)
        return out

    @classmethod
    def from_params(cls, params, prefix, tasks=("cls", "bbox")):
        return cls({t: CLSEBranch(*(params[f"{prefix}.{t}.{k}"] for k in ("w1", "b1", "w2", "b2")))
                    for t in tasks})


def clse_weights(pyramid, params: CLSEParams, task: str) -> Tensor:
    """Channel weights (N×C) from the concatenated per-level global max-pools."""
    levels = as_levels(pyramid)
    if not levels:
        raise ShapeError("clse_weights needs a non-empty pyramid")
    c = levels[0].dims[1]
    if any(lv.dims[1] != c for lv in levels):
        raise ShapeError(f"channel counts differ across levels: {[lv.dims[1] for lv in levels]}")
    br = params.branches[task]
    pooled = T.concat([T.global_max_pool(lv) for lv in levels], axis=1)
    if br.w1.dims[1] != pooled.dims[1] or br.w2.dims[0] != c:
        raise ShapeError(f"squeeze weights {br.w1.dims} / excite weights {br.w2.dims} "
                         f"do not fit {len(levels)} levels of {c} channels")
    hidden = T.relu(T.linear(pooled, br.w1, br.b1))
    return T.sigmoid(T.linear(hidden, br.w2, br.b2))


def apply_channel_attention(weights: Tensor, features: Tensor) -> Tensor:
    return T.scale_channels(weights, features)


# ------------------------------------------------------------------ aligned


@dataclass
class AlignedAttentionParams:
    reduce_w: Tensor
    reduce_b: Tensor
    offset_w: Tensor
    offset_b: Tensor
    deform_w: Tensor
    deform_b: Tensor
    expand_w: Tensor
    expand_b: Tensor

    @classmethod
    def init(cls, channels, rng=None, std=None, dtype=np.float32):
        if channels % 4:
            raise ShapeError(f"aligned attention needs channels divisible by 4, got {channels}")
        rng = rng or np.random.default_rng(0)
        mid = channels // 4

        def he(shape):
            fan_in = shape[1] * shape[2] * shape[3]
            return _normal(rng, shape, std or np.sqrt(2.0 / fan_in), dtype)

        return cls(he((mid, channels, 1, 1)), _zeros((mid,), dtype),
                   _zeros((18, mid, 3, 3), dtype), _zeros((18,), dtype),
                   he((mid, mid, 3, 3)), _zeros((mid,), dtype),
                   he((channels, mid, 1, 1)), _zeros((channels,), dtype))

    _fields = ("reduce_w", "reduce_b", "offset_w", "offset_b", "deform_w", "deform_b", "expand_w", "expand_b")

    def named(self) -> dict:
        return {k.replace("_", "."): getattr(self, k) for k in self._fields}

    @classmethod
    def from_params(cls, params, prefix):
        return cls(*(params[f"{prefix}.{k.replace('_', '.')}"] for k in cls._fields))


def aligned_attention_forward(x: Tensor, params: AlignedAttentionParams) -> Tensor:
    """x + expand(relu(deform(relu(reduce(x)), offsets))); offsets predicted from reduce(x)."""
    c = x.dims[1]
    if c % 4:
        raise ShapeError(f"aligned attention needs channels divisible by 4, got {c}")
    mid = params.reduce_w.dims[0]
    r = T.relu(conv2d(x, params.reduce_w, params.reduce_b, ConvSpec(c, mid, (1, 1))))
    off = conv2d(r, params.offset_w, params.offset_b, ConvSpec(mid, 18, (3, 3), 1, 1, 1))
    d = T.relu(deformable_conv2d(r, params.deform_w, params.deform_b, off,
                                 ConvSpec(mid, params.deform_w.dims[0], (3, 3), 1, 1, 1)))
    e = conv2d(d, params.expand_w, params.expand_b, ConvSpec(params.expand_w.dims[1], c, (1, 1)))
    return T.add(x, e)


def register(params: NetParams, prefix: str, block) -> None:
    """Add a block's tensors to ``params`` under ``prefix``."""
    _register(params, prefix, block.named())
