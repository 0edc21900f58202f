"""Detections for one image: decode, per-class Soft-NMS, voting, top-N."""

from __future__ import annotations

from collections import defaultdict

from ..config import PostConfig
from .decode import decode_levels
from .nms import bbox_vote, soft_nms


def finalize(dets, post: PostConfig) -> list:
    """Soft-NMS then voting, class by class; best ``post.max_dets`` overall.

    Soft-NMS runs with a zero floor so every candidate carries its decayed
    score into the voting population; seeds are those above ``score_floor``.
    """
    by_class = defaultdict(list)
    for d in dets:
        by_class[d.class_id].append(d)
    out = []
    for c in sorted(by_class):
        decayed = soft_nms(by_class[c], post.nms_method, post.nms_nt, post.nms_sigma, 0.0)
        seeds = [d for d in decayed if d.score >= post.score_floor]
        out.extend(bbox_vote(seeds, post.vote_iou, decayed) if post.voting else seeds)
    out.sort(key=lambda d: -d.score)
    return out[:post.max_dets]


def detect_from_levels(levels, anchors, post: PostConfig, image_size, scale: float = 1.0) -> list:
    dets = decode_levels(levels, anchors, post.score_thresh, post.topk, image_size, scale)
    return finalize(dets, post)
