"""Box geometry: IoU, delta encoding and decoding."""

from __future__ import annotations

import math

import numpy as np

# exp() argument cap for width/height deltas
_MAX_LOG_RATIO = math.log(1000.0 / 16)


def iou(a, b) -> float:
    """Intersection over union of two corner-form boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n,4) and (m,4) box arrays -> (n,m)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def _center_form(boxes):
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return boxes[..., 0] + 0.5 * w, boxes[..., 1] + 0.5 * h, w, h


def encode_box(anchor, gt) -> np.ndarray:
    """Regression target (dx/w_a, dy/h_a, log w ratio, log h ratio); broadcasts over leading dims."""
    anchor = np.asarray(anchor, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    acx, acy, aw, ah = _center_form(anchor)
    gcx, gcy, gw, gh = _center_form(gt)
    return np.stack([(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)


def decode_box(anchor, deltas, image_size=None) -> np.ndarray:
    """Inverse of :func:`encode_box`; clips to ``(width, height)`` when given."""
    anchor = np.asarray(anchor, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    acx, acy, aw, ah = _center_form(anchor)
    cx = acx + deltas[..., 0] * aw
    cy = acy + deltas[..., 1] * ah
    w = aw * np.exp(np.minimum(deltas[..., 2], _MAX_LOG_RATIO))
    h = ah * np.exp(np.minimum(deltas[..., 3], _MAX_LOG_RATIO))
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)
    if image_size is not None:
        out = clip_boxes(out, image_size)
    return out


def clip_boxes(boxes, image_size) -> np.ndarray:
    """Clip to [0, width] x [0, height]; ``image_size`` is (width, height) or a side length."""
    if np.isscalar(image_size):
        width = height = image_size
    else:
        width, height = image_size
    boxes = np.array(boxes, dtype=np.float64)
    boxes[..., 0::2] = np.clip(boxes[..., 0::2], 0, width)
    boxes[..., 1::2] = np.clip(boxes[..., 1::2], 0, height)
    return boxes
