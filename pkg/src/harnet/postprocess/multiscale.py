"""Merging head outputs of the same image tested at several scales.

Level l of an image tested at ``scale`` (test size / original size) sees the
original image at an effective stride ``stride_l / scale``.  With 5-level
pyramids and a 2x scale step, P(l+1) of the large image and P(l) of the small
one coincide, so 4 resolutions are shared and each image keeps one of its
own (the small image's coarsest, the large image's finest).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..config import PostConfig
from ..errors import ShapeError
from .decode import decode_levels
from .pipeline import finalize


@dataclass
class ScaleLevel:
    """One pyramid level at one test scale; anchors are in test-image pixels."""

    stride: float
    grid: tuple
    probs: np.ndarray
    deltas: np.ndarray
    anchors: np.ndarray


@dataclass
class ScaleOutputs:
    scale: float
    levels: list

    def effective_strides(self) -> list:
        return [_key(lv.stride / self.scale) for lv in self.levels]


def _key(stride: float) -> float:
    return round(float(stride), 6)


def scale_outputs(head, anchors, scale: float, image: int = 0) -> ScaleOutputs:
    """Wrap one image's :class:`HeadOutputs` with stride metadata."""
    levels = []
    for (probs, deltas), anc, stride, lv in zip(head.level_arrays(image), anchors, head.strides,
                                                 head.cls_probs):
        levels.append(ScaleLevel(float(stride), tuple(lv.dims[2:]), probs, deltas, anc))
    return ScaleOutputs(float(scale), levels)


def shared_resolutions(outputs) -> list:
    """Effective strides (original-image pixels) present in more than one scale."""
    counts = defaultdict(int)
    for so in outputs:
        for k in set(so.effective_strides()):
            counts[k] += 1
    return sorted(k for k, n in counts.items() if n > 1)


def merge_levels(outputs) -> list:
    """Group levels by effective stride and average each group elementwise.

    Returns ``[(effective stride, probs, deltas, anchors, scale)]`` finest
    first, where anchors/scale come from the group's smallest test scale.
    """
    groups = defaultdict(list)
    for so in sorted(outputs, key=lambda s: s.scale):
        for k, lv in zip(so.effective_strides(), so.levels):
            groups[k].append((so.scale, lv))
    merged = []
    for k in sorted(groups):
        members = groups[k]
        scale0, first = members[0]
        for _, lv in members[1:]:
            if lv.grid != first.grid or lv.probs.shape != first.probs.shape:
                raise ShapeError(f"effective stride {k}: grid {lv.grid} vs {first.grid} cannot be averaged")
        if len(members) == 1:
            probs, deltas = first.probs, first.deltas
        else:
            probs = sum(lv.probs.astype(np.float64) for _, lv in members) / len(members)
            deltas = sum(lv.deltas.astype(np.float64) for _, lv in members) / len(members)
        merged.append((k, probs, deltas, first.anchors, scale0))
    return merged


def merge_multiscale(outputs, post: PostConfig | None = None, image_size=None) -> list:
    """Average shared levels, decode every level in original coordinates, then suppress and vote."""
    post = post or PostConfig()
    if not outputs:
        return []
    dets = []
    for _, probs, deltas, anchors, scale in merge_levels(outputs):
        dets.extend(decode_levels([(probs, deltas)], [anchors], post.score_thresh, post.topk,
                                  image_size, scale))
    return finalize(dets, post)
