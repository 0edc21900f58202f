"""COCO-style average precision: 101-point interpolation, greedy matching."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..detector.boxes import iou_matrix

COCO_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
_RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class APMetrics:
    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float

    def to_dict(self) -> dict:
        return asdict(self)


def _sqrt_area(boxes):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.sqrt(np.clip(boxes[:, 2] - boxes[:, 0], 0, None) * np.clip(boxes[:, 3] - boxes[:, 1], 0, None))


def _rank(item):
    image_id, _, d = item
    return -d.score, image_id, d.box


def _interpolated_ap(tp: np.ndarray, npos: int) -> float:
    if not tp.size:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / npos
    precision = ctp / (ctp + cfp)
    # precision envelope: best precision at any recall >= r
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_POINTS, side="left")
    q = np.zeros_like(_RECALL_POINTS)
    ok = idx < recall.size
    q[ok] = precision[idx[ok]]
    return float(q.mean())


def _class_ap(dets, gts, thresh: float, size_range, max_dets: int) -> float | None:
    """AP of one class at one IoU threshold; None when no gt falls in the size range.

    ``dets``: list of (image_id, score, box, stable index) already sorted;
    ``gts``: {image_id: (n, 4) boxes}.  Ground truth outside ``size_range``
    is ignored: detections matched to it, or unmatched ones outside the
    range, count neither way.
    """
    lo, hi = size_range
    gt_ignore = {i: ~((_sqrt_area(b) >= lo) & (_sqrt_area(b) < hi)) for i, b in gts.items()}
    npos = int(sum((~ig).sum() for ig in gt_ignore.values()))
    if npos == 0:
        return None
    taken = {i: np.zeros(len(b), dtype=bool) for i, b in gts.items()}
    per_image = {}
    tp = []
    for image_id, _, box, _ in dets:
        seen = per_image.get(image_id, 0)
        if seen >= max_dets:
            continue
        per_image[image_id] = seen + 1
        gboxes = gts.get(image_id)
        match_ignored = matched = False
        if gboxes is not None and len(gboxes):
            ious = iou_matrix(np.asarray(box)[None, :], gboxes)[0]
            ig = gt_ignore[image_id]
            for want_ignored in (False, True):
                cand = np.nonzero((ious >= thresh) & ~taken[image_id] & (ig == want_ignored))[0]
                if cand.size:
                    # highest IoU, first index on ties
                    j = cand[np.argmax(ious[cand])]
                    taken[image_id][j] = True
                    matched, match_ignored = True, want_ignored
                    break
        if matched:
            if match_ignored:
                continue
            tp.append(True)
        else:
            s = _sqrt_area(box)[0]
            if not (lo <= s < hi):
                continue
            tp.append(False)
    return _interpolated_ap(np.array(tp, dtype=bool), npos)


def compute_ap(dets, gt, iou_thresholds=COCO_THRESHOLDS, small_max: float = 16.0, medium_max: float = 24.0,
               max_dets: int = 100) -> APMetrics:
    """Mean AP over classes and IoU thresholds, plus AP50, AP75 and size buckets.

    ``dets``: {image_id: [Detection]}; ``gt``: {image_id: (boxes (n,4),
    classes (n,))}.  Classes without any ground truth are left out of the
    class mean.  Sizes are sqrt(area) in pixels: small < ``small_max`` <=
    medium < ``medium_max`` <= large.
    """
    thresholds = [float(t) for t in iou_thresholds]
    gt = {i: (np.asarray(b, dtype=np.float64).reshape(-1, 4), np.asarray(c, dtype=np.int64).reshape(-1))
          for i, (b, c) in gt.items()}
    classes = sorted({int(c) for _, cs in gt.values() for c in cs})
    flat = []
    for image_id in sorted(dets):
        for j, d in enumerate(dets[image_id]):
            flat.append((image_id, j, d))
    # score descending, ties by image id then box: independent of input order
    flat.sort(key=_rank)

    def mean_ap(ths, size_range):
        vals = []
        for c in classes:
            cdets = [(i, d.score, d.box, j) for i, j, d in flat if d.class_id == c]
            cgts = {i: b[cs == c] for i, (b, cs) in gt.items()}
            per_t = [_class_ap(cdets, cgts, t, size_range, max_dets) for t in ths]
            if per_t[0] is not None:
                vals.append(np.mean(per_t))
        return float(np.mean(vals)) if vals else 0.0

    everything = (0.0, np.inf)
    return APMetrics(
        ap=mean_ap(thresholds, everything),
        ap50=mean_ap([0.5], everything),
        ap75=mean_ap([0.75], everything),
        ap_small=mean_ap(thresholds, (0.0, small_max)),
        ap_medium=mean_ap(thresholds, (small_max, medium_max)),
        ap_large=mean_ap(thresholds, (medium_max, np.inf)),
    )


def precision_recall(dets, gt, class_id: int, thresh: float = 0.5):
    """Raw (recall, precision) arrays of one class, for plotting."""
    gtc = {i: np.asarray(b, dtype=np.float64).reshape(-1, 4)[np.asarray(c) == class_id] for i, (b, c) in gt.items()}
    npos = sum(len(b) for b in gtc.values())
    flat = sorted(((i, j, d) for i in dets for j, d in enumerate(dets[i]) if d.class_id == class_id),
                  key=_rank)
    taken = {i: np.zeros(len(b), dtype=bool) for i, b in gtc.items()}
    tp = []
    for i, _, d in flat:
        b = gtc.get(i)
        hit = False
        if b is not None and len(b):
            ious = iou_matrix(np.asarray(d.box)[None, :], b)[0]
            cand = np.nonzero((ious >= thresh) & ~taken[i])[0]
            if cand.size:
                taken[i][cand[np.argmax(ious[cand])]] = True
                hit = True
        tp.append(hit)
    tp = np.array(tp, dtype=bool)
    ctp = np.cumsum(tp)
    recall = ctp / max(npos, 1)
    precision = ctp / np.arange(1, tp.size + 1) if tp.size else np.zeros(0)
    return recall, precision
