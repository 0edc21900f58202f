"""Soft-NMS score decay and score-weighted bounding-box voting."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from ..detector.boxes import iou_matrix
from ..structures import Detection


def soft_nms(dets, method: str = "gaussian", nt: float = 0.5, sigma: float = 0.5,
             score_floor: float = 0.001) -> list:
    """Decay, rather than delete, boxes overlapping the current best one.

    Repeatedly moves the highest-scoring remaining detection M to the output
    (first index on ties) and rescales every other remaining score s by
    ``1 - IoU`` if IoU > nt (linear) or ``exp(-IoU**2 / sigma)`` (gaussian);
    detections whose score falls below ``score_floor`` are dropped.  Expects
    one class per call; see :func:`soft_nms_per_class`.
    """
    if method not in ("linear", "gaussian"):
        raise ValueError(f"unknown soft-NMS method {method!r}")
    dets = list(dets)
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    remaining = np.nonzero(scores >= score_floor)[0]
    out = []
    while remaining.size:
        pick = int(np.argmax(scores[remaining]))
        m = remaining[pick]
        remaining = np.delete(remaining, pick)
        d = dets[m]
        out.append(Detection(d.box, scores[m], d.class_id, d.prob))
        if not remaining.size:
            break
        ov = iou_matrix(boxes[m][None, :], boxes[remaining])[0]
        if method == "linear":
            factor = np.where(ov > nt, 1.0 - ov, 1.0)
        else:
            # libm exp, not numpy's SIMD kernel: the latter differs by an ulp on some
            # inputs and CPUs, which would make decayed scores machine-dependent
            factor = np.fromiter((math.exp(v) for v in -(ov * ov) / sigma), np.float64, ov.size)
        scores[remaining] = scores[remaining] * factor
        remaining = remaining[scores[remaining] >= score_floor]
    return out


def soft_nms_per_class(dets, **kw) -> list:
    by_class = defaultdict(list)
    for d in dets:
        by_class[d.class_id].append(d)
    out = []
    for c in sorted(by_class):
        out.extend(soft_nms(by_class[c], **kw))
    return out


def vote_box(cluster) -> Detection:
    """Probability-weighted mean box of a cluster; score is the cluster maximum.

    The mean is taken over offsets from the first member, so a cluster of
    identical boxes returns that box exactly.
    """
    boxes = np.array([d.box for d in cluster], dtype=np.float64)
    w = np.array([d.prob for d in cluster], dtype=np.float64)
    box = boxes[0] + (w[:, None] * (boxes - boxes[0])).sum(axis=0) / w.sum()
    top = max(cluster, key=lambda d: d.score)
    return Detection(tuple(box), top.score, top.class_id, top.prob)


def bbox_vote(seeds, vote_iou: float = 0.5, population=None) -> list:
    """Replace each seed's box by the weighted mean of the detections it gathers.

    A seed gathers the same-class members of ``population`` (default: the
    seeds) with IoU >= ``vote_iou`` whose score does not exceed its own, so a
    seed never absorbs a stronger neighbour and the voted score, the cluster
    maximum, is the seed's own score.  Weights are the raw probabilities.
    """
    seeds = list(seeds)
    if not seeds:
        return []
    pop = seeds if population is None else list(population)
    pop_boxes = np.array([d.box for d in pop], dtype=np.float64).reshape(-1, 4)
    pop_scores = np.array([d.score for d in pop])
    pop_cls = np.array([d.class_id for d in pop])
    ious = iou_matrix(np.array([s.box for s in seeds]), pop_boxes)
    out = []
    for i, s in enumerate(seeds):
        take = (ious[i] >= vote_iou) & (pop_cls == s.class_id) & (pop_scores <= s.score)
        members = [s] + [pop[j] for j in np.nonzero(take)[0] if pop[j] is not s]
        out.append(vote_box(members))
    return out
