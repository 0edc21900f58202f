"""Anchor generation and anchor-to-ground-truth assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import encode_box, iou_matrix

POSITIVE_MIN = 0
NEGATIVE = -1
IGNORE = -2


def grid_sizes(image_size, num_levels: int = 5) -> list:
    """Feature-map (H, W) per pyramid level for an input of ``image_size``.

    Every stride-2 stage maps n -> ceil(n/2); P3 sits three halvings down.
    """
    h, w = (image_size, image_size) if np.isscalar(image_size) else image_size
    for _ in range(3):
        h, w = -(-h // 2), -(-w // 2)
    sizes = []
    for _ in range(num_levels):
        sizes.append((h, w))
        h, w = -(-h // 2), -(-w // 2)
    return sizes


def anchor_shapes(stride: float, base_factor: float, scales, ratios) -> np.ndarray:
    """(A, 2) anchor widths/heights at one level, scale-major then ratio."""
    base = base_factor * stride
    out = []
    for s in scales:
        for r in ratios:
            out.append((base * s / np.sqrt(r), base * s * np.sqrt(r)))
    return np.array(out, dtype=np.float64)


def level_anchors(stride: float, grid, shapes: np.ndarray) -> np.ndarray:
    """(H*W*A, 4) anchors ordered row, column, anchor; centres at stride*i + (stride-1)/2."""
    gh, gw = grid
    cy = np.arange(gh) * stride + (stride - 1) / 2.0
    cx = np.arange(gw) * stride + (stride - 1) / 2.0
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    ctr = np.stack([cxx, cyy], axis=-1).reshape(-1, 1, 2)
    half = shapes[None, :, :] / 2.0
    return np.concatenate([ctr - half, ctr + half], axis=-1).reshape(-1, 4)


def generate_anchors(config, image_size) -> list:
    """One (H*W*A, 4) anchor array per pyramid level P3..P7."""
    ac = config.anchors
    grids = grid_sizes(image_size, len(ac.strides))
    return [level_anchors(s, g, anchor_shapes(s, ac.base_factor, ac.scales, ac.ratios))
            for s, g in zip(ac.strides, grids)]


@dataclass
class TargetAssignment:
    """Per-anchor labels (class id >= 0, NEGATIVE or IGNORE), matched gt and deltas."""

    labels: np.ndarray
    matched: np.ndarray
    deltas: np.ndarray
    max_iou: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.labels >= POSITIVE_MIN

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def assign_targets(anchors, gt_boxes, gt_classes, pos_iou: float = 0.5, neg_iou: float = 0.4) -> TargetAssignment:
    """Retina-style matching: IoU >= pos_iou positive, < neg_iou negative, else ignored.

    Each ground truth additionally claims its highest-IoU anchor (first on ties).
    """
    anchors = np.concatenate(anchors, axis=0) if isinstance(anchors, (list, tuple)) else np.asarray(anchors)
    m = anchors.shape[0]
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    labels = np.full(m, NEGATIVE, dtype=np.int64)
    matched = np.full(m, -1, dtype=np.int64)
    deltas = np.zeros((m, 4), dtype=np.float64)
    if gt_boxes.shape[0] == 0:
        return TargetAssignment(labels, matched, deltas, np.zeros(m))
    ious = iou_matrix(anchors, gt_boxes)
    best_gt = ious.argmax(axis=1)
    best = ious[np.arange(m), best_gt]
    labels[(best >= neg_iou) & (best < pos_iou)] = IGNORE
    pos = best >= pos_iou
    matched[pos] = best_gt[pos]
    for g, a in enumerate(ious.argmax(axis=0)):
        matched[a] = g
        pos[a] = True
    labels[pos] = gt_classes[matched[pos]]
    deltas[pos] = encode_box(anchors[pos], gt_boxes[matched[pos]])
    return TargetAssignment(labels, matched, deltas, best)
