"""Raw head maps -> thresholded, decoded, clipped detections."""

from __future__ import annotations

import numpy as np

from ..detector.boxes import clip_boxes, decode_box
from ..errors import ShapeError
from ..structures import Detection


def _level_candidates(probs: np.ndarray, score_thresh: float, topk: int):
    """(anchor index, class, prob) of the top-k (anchor, class) pairs above threshold."""
    flat = probs.reshape(-1)
    keep = np.nonzero(flat >= score_thresh)[0]
    if keep.size > topk:
        # stable: equal probabilities keep their (anchor, class) order
        order = np.argsort(-flat[keep], kind="stable")[:topk]
        keep = np.sort(keep[order])
    k = probs.shape[1]
    return keep // k, keep % k, flat[keep]


def decode_levels(levels, anchors, score_thresh: float = 0.05, topk: int = 1000, image_size=None,
                  scale: float = 1.0) -> list:
    """Decode per-level ``(probs (M_l, K), deltas (M_l, 4))`` pairs against matching anchors.

    Boxes are divided by ``scale`` (test size / original size) before
    clipping, so callers at a resized scale get original-image coordinates;
    ``image_size`` is the original (width, height) or side length.
    """
    out = []
    for (probs, deltas), anc in zip(levels, anchors):
        probs = np.asarray(probs)
        if probs.shape[0] != anc.shape[0]:
            raise ShapeError(f"{probs.shape[0]} prediction rows for {anc.shape[0]} anchors")
        idx, cls, p = _level_candidates(probs, score_thresh, topk)
        if not idx.size:
            continue
        boxes = decode_box(anc[idx], np.asarray(deltas, dtype=np.float64)[idx]) / scale
        if image_size is not None:
            boxes = clip_boxes(boxes, image_size)
        out.extend(Detection(b, s, c) for b, s, c in zip(boxes, p.astype(np.float64), cls))
    return out


def decode_detections(outputs, anchors, score_thresh: float = 0.05, topk: int = 1000, image_size=None,
                      image: int = 0) -> list:
    """Threshold, keep the top-k per level, decode deltas and clip.

    ``outputs`` is a :class:`~harnet.detector.model.HeadOutputs` (``image``
    selects the batch entry) or a list of per-level (probs, deltas) arrays.
    """
    levels = outputs.level_arrays(image) if hasattr(outputs, "level_arrays") else outputs
    return decode_levels(levels, anchors, score_thresh, topk, image_size)
