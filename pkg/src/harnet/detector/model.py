"""HAR-Net and the plain Retina-Net baseline on a small trainable backbone.

Pipeline: backbone (C3, C4, C5) -> aligned attention on C4, C5 -> feature
pyramid P3..P7 -> shared head.  Each head branch runs four 3x3 convs (with
CLGN + affine when channel attention is on), is re-weighted by the spatial
mask shared by both branches, passes an extra 3x3 conv + ReLU, is scaled by
its task's CLSE weights and ends in a 3x3 prediction conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..attention import (AlignedAttentionParams, CLGNParams, CLSEParams, SpatialAttentionParams,
                         aligned_attention_forward, apply_channel_attention, apply_spatial_attention,
                         clgn_normalize, clse_weights, register, spatial_attention_forward)
from ..config import DetectConfig
from ..conv import ConvSpec, conv2d
from ..errors import ShapeError
from ..params import NetParams
from ..structures import FeaturePyramid
from ..tensor import Tensor

TASKS = ("cls", "bbox")
# (name, stride) in execution order; C3, C4, C5 are read after the *b layers
BACKBONE_LAYERS = ("stem0", "stem1", "c3a", "c3b", "c4a", "c4b", "c5a", "c5b")
ATTENTION_PREFIXES = ("attn.spatial.", "attn.clse.")


@dataclass
class HeadOutputs:
    """Per-level raw maps: cls logits/probabilities N×(A·K)×H×W and box deltas N×(A·4)×H×W."""

    cls_logits: list
    cls_probs: list
    bbox: list
    strides: list
    num_anchors: int
    num_classes: int

    def flat_logits(self) -> Tensor:
        return _flatten(self.cls_logits, self.num_classes)

    def flat_probs(self) -> Tensor:
        return _flatten(self.cls_probs, self.num_classes)

    def flat_bbox(self) -> Tensor:
        return _flatten(self.bbox, 4)

    def level_arrays(self, image: int = 0) -> list:
        """[(probs (H*W*A, K), deltas (H*W*A, 4))] for one image, numpy only."""
        out = []
        for p, b in zip(self.cls_probs, self.bbox):
            out.append((_level_rows(p.data[image], self.num_classes), _level_rows(b.data[image], 4)))
        return out


def _level_rows(m: np.ndarray, width: int) -> np.ndarray:
    c, h, w = m.shape
    return m.transpose(1, 2, 0).reshape(h * w * (c // width), width)


def _flatten(levels, width) -> Tensor:
    """Concatenate levels into (N*M, width) rows ordered image, level, row, column, anchor."""
    n = levels[0].dims[0]
    parts = []
    for t in levels:
        _, c, h, w = t.dims
        parts.append(T.reshape(T.transpose(t, (0, 2, 3, 1)), (n, h * w * (c // width), width)))
    flat = T.concat(parts, axis=1)
    return T.reshape(flat, (n * flat.dims[1], width))


# ------------------------------------------------------------------ params


def _he(rng, shape, gain=2.0):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)


def init_params(config: DetectConfig, seed: int | None = None, dtype=np.float32) -> NetParams:
    """Fresh parameters for every module; attention toggles only change which are used."""
    m = config.model
    rng = np.random.default_rng(config.seed if seed is None else seed)
    p = NetParams()

    def conv(name, cout, cin, k, w):
        p.add(f"{name}.w", w.astype(dtype) if isinstance(w, np.ndarray) else
              rng.normal(0.0, w, size=(cout, cin, k, k)).astype(dtype))
        p.add(f"{name}.b", np.zeros(cout, dtype=dtype))

    c3, c4, c5 = m.backbone_channels
    widths = {"stem0": (3, m.stem_channels), "stem1": (m.stem_channels, c3), "c3a": (c3, c3),
              "c3b": (c3, c3), "c4a": (c3, c4), "c4b": (c4, c4), "c5a": (c4, c5), "c5b": (c5, c5)}
    for name in BACKBONE_LAYERS:
        cin, cout = widths[name]
        conv(f"backbone.{name}", cout, cin, 3, _he(rng, (cout, cin, 3, 3)))

    for lvl, ch in (("c4", c4), ("c5", c5)):
        register(p, f"aligned.{lvl}", AlignedAttentionParams.init(ch, rng=rng, dtype=dtype))

    f = m.pyramid_width
    for lvl, ch in (("3", c3), ("4", c4), ("5", c5)):
        conv(f"fpn.lat{lvl}", f, ch, 1, _he(rng, (f, ch, 1, 1), 1.0))
        conv(f"fpn.out{lvl}", f, f, 3, _he(rng, (f, f, 3, 3), 1.0))
    conv("fpn.p6", f, c5, 3, _he(rng, (f, c5, 3, 3), 1.0))
    conv("fpn.p7", f, f, 3, _he(rng, (f, f, 3, 3), 1.0))

    hw, std = m.head_width, m.head_init_std
    a, k = config.num_anchors, m.num_classes
    for task, n_out in (("cls", a * k), ("bbox", a * 4)):
        cin = f
        for i in range(m.head_convs):
            conv(f"head.{task}.conv{i}", hw, cin, 3, std)
            register(p, f"head.{task}.clgn{i}",
                     CLGNParams.init(hw, m.clgn_group_size, m.clgn_eps, dtype=dtype))
            cin = hw
        conv(f"head.{task}.extra", hw, hw, 3, std)
        conv(f"head.{task}.pred", n_out, hw, 3, std)
    prior = m.prior_prob
    p["head.cls.pred.b"].data[:] = -np.log((1.0 - prior) / prior)

    register(p, "attn.spatial", SpatialAttentionParams.init(f, m.spatial_channels, tuple(m.dilations),
                                                            rng=rng, std=std, dtype=dtype))
    register(p, "attn.clse", CLSEParams.init(hw, len(config.anchors.strides), m.clse_reduction,
                                             TASKS, rng=rng, std=std, dtype=dtype))
    return p


def active_param_names(params: NetParams, config: DetectConfig, bypass: bool = False) -> list:
    """Parameters that receive gradients for the given toggles (``bypass``: attention forced to 1)."""
    at = config.attention
    skip = []
    if not at.aligned:
        skip.append("aligned.")
    if not at.spatial or bypass:
        skip.append("attn.spatial.")
    if not at.spatial:
        skip += ["head.cls.extra.", "head.bbox.extra."]
    if not at.channel or bypass:
        skip.append("attn.clse.")
    if not at.channel:
        skip += ["head.cls.clgn", "head.bbox.clgn"]
    return [n for n in params.names() if not any(n.startswith(s) for s in skip)]


# ----------------------------------------------------------------- forward


def _conv(params, name, x, stride=1, padding=None, dilation=1):
    w = params[f"{name}.w"]
    o, c, kh, kw = w.dims
    pad = (kh // 2) * dilation if padding is None else padding
    return conv2d(x, w, params[f"{name}.b"], ConvSpec(c, o, (kh, kw), stride, pad, dilation))


def _check_image(image: Tensor):
    if image.data.ndim != 4 or image.dims[1] != 3:
        raise ShapeError(f"expected N×3×H×W images, got {image.dims}")
    h, w = image.dims[2:]
    if h % 8 or w % 8:
        raise ShapeError(f"image dims {h}x{w} must be divisible by 8")


def backbone_forward(image: Tensor, params: NetParams) -> tuple:
    x, feats = image, {}
    for name in BACKBONE_LAYERS:
        stride = 2 if name.endswith(("0", "1", "a")) else 1
        x = T.relu(_conv(params, f"backbone.{name}", x, stride=stride))
        if name.endswith("b"):
            feats[name[:2]] = x
    return feats["c3"], feats["c4"], feats["c5"]


def pyramid_forward(c3: Tensor, c4: Tensor, c5: Tensor, params: NetParams, strides) -> FeaturePyramid:
    l5 = _conv(params, "fpn.lat5", c5)
    l4 = _conv(params, "fpn.lat4", c4)
    l3 = _conv(params, "fpn.lat3", c3)
    t4 = T.add(l4, T.upsample_nearest(l5, *l4.dims[2:]))
    t3 = T.add(l3, T.upsample_nearest(t4, *l3.dims[2:]))
    p3 = _conv(params, "fpn.out3", t3)
    p4 = _conv(params, "fpn.out4", t4)
    p5 = _conv(params, "fpn.out5", l5)
    p6 = _conv(params, "fpn.p6", c5, stride=2)
    p7 = _conv(params, "fpn.p7", T.relu(p6), stride=2)
    return FeaturePyramid([p3, p4, p5, p6, p7], list(strides))


def _predict(params, config, branch_out: dict, strides) -> HeadOutputs:
    cls_logits = [_conv(params, "head.cls.pred", x) for x in branch_out["cls"]]
    bbox = [_conv(params, "head.bbox.pred", x) for x in branch_out["bbox"]]
    return HeadOutputs(cls_logits, [T.sigmoid(x) for x in cls_logits], bbox, list(strides),
                       config.num_anchors, config.model.num_classes)


def head_forward(pyramid: FeaturePyramid, params: NetParams, config: DetectConfig, bypass: bool = False) -> HeadOutputs:
    """Shared detection head over every pyramid level (one parameter set for all levels)."""
    at, m = config.attention, config.model
    masks = None
    if at.spatial and not bypass:
        sp = SpatialAttentionParams.from_params(params, "attn.spatial", m.dilations)
        masks = [spatial_attention_forward(lv, sp) for lv in pyramid]
    clse = CLSEParams.from_params(params, "attn.clse", TASKS) if at.channel and not bypass else None

    branch_out = {}
    for task in TASKS:
        xs = list(pyramid)
        for i in range(m.head_convs):
            xs = [_conv(params, f"head.{task}.conv{i}", x) for x in xs]
            if at.channel:
                gn = CLGNParams.from_params(params, f"head.{task}.clgn{i}", m.clgn_group_size, m.clgn_eps)
                xs = clgn_normalize(xs, gn)
            xs = [T.relu(x) for x in xs]
        if at.spatial:
            if masks is not None:
                xs = [apply_spatial_attention(mk, x) for mk, x in zip(masks, xs)]
            xs = [T.relu(_conv(params, f"head.{task}.extra", x)) for x in xs]
        if clse is not None:
            weights = clse_weights(xs, clse, task)
            xs = [apply_channel_attention(weights, x) for x in xs]
        branch_out[task] = xs
    return _predict(params, config, branch_out, pyramid.strides)


def harnet_forward(image: Tensor, params: NetParams, config: DetectConfig, bypass: bool = False) -> HeadOutputs:
    """Full network.  ``bypass`` forces spatial masks and CLSE weights to 1 (training phase 1)."""
    _check_image(image)
    c3, c4, c5 = backbone_forward(image, params)
    if config.attention.aligned:
        c4 = aligned_attention_forward(c4, AlignedAttentionParams.from_params(params, "aligned.c4"))
        c5 = aligned_attention_forward(c5, AlignedAttentionParams.from_params(params, "aligned.c5"))
    pyramid = pyramid_forward(c3, c4, c5, params, config.anchors.strides)
    return head_forward(pyramid, params, config, bypass)


def baseline_forward(image: Tensor, params: NetParams, config: DetectConfig) -> HeadOutputs:
    """Retina-Net path with no attention hooks at all."""
    _check_image(image)
    c3, c4, c5 = backbone_forward(image, params)
    pyramid = pyramid_forward(c3, c4, c5, params, config.anchors.strides)
    branch_out = {}
    for task in TASKS:
        outs = []
        for x in pyramid:
            for i in range(config.model.head_convs):
                x = T.relu(_conv(params, f"head.{task}.conv{i}", x))
            outs.append(x)
        branch_out[task] = outs
    return _predict(params, config, branch_out, pyramid.strides)
