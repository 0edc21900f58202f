"""Focal classification loss and smooth-L1 box regression loss."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor, apply_op
from .anchors import POSITIVE_MIN

_PROB_CLAMP = 1e-12


def _targets(labels: np.ndarray, m: int, k: int):
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != m:
        raise ShapeError(f"{labels.shape[0]} labels for {m} anchors")
    valid = labels >= -1
    onehot = np.zeros((m, k), dtype=bool)
    pos = labels >= POSITIVE_MIN
    onehot[np.nonzero(pos)[0], labels[pos]] = True
    return onehot, valid, int(pos.sum())


def focal_loss(cls_probs: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0,
               normalizer: float | None = None) -> Tensor:
    """Sum over non-ignored anchors and classes of -a_t (1-p_t)^g log p_t, over max(1, #positives).

    ``cls_probs`` is M×K (post-sigmoid); ``labels`` holds a class id for
    positives, -1 for negatives and -2 for ignored anchors.
    """
    m, k = cls_probs.dims
    onehot, valid, npos = _targets(labels, m, k)
    norm = float(max(1, npos) if normalizer is None else normalizer)
    p = np.clip(cls_probs.data.astype(np.float64), _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    pt = np.where(onehot, p, 1.0 - p)
    at = np.where(onehot, alpha, 1.0 - alpha)
    w = valid[:, None].astype(np.float64)
    loss = -(at * (1.0 - pt) ** gamma * np.log(pt) * w).sum() / norm

    def backward(g):
        # d/dpt of -a (1-pt)^g log pt, chained through pt = p or 1-p
        mod = gamma * (1.0 - pt) ** (gamma - 1.0) if gamma else 0.0
        dpt = at * (mod * np.log(pt) - (1.0 - pt) ** gamma / pt)
        dp = np.where(onehot, dpt, -dpt) * w / norm
        return ((g * dp).astype(cls_probs.dtype),)

    return apply_op(np.asarray(loss, dtype=cls_probs.dtype), (cls_probs,), backward)


def focal_loss_with_logits(cls_logits: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0,
                           normalizer: float | None = None) -> Tensor:
    """Same value as :func:`focal_loss` on sigmoid(logits), evaluated stably."""
    m, k = cls_logits.dims
    onehot, valid, npos = _targets(labels, m, k)
    norm = float(max(1, npos) if normalizer is None else normalizer)
    x = cls_logits.data.astype(np.float64)
    z = np.where(onehot, x, -x)
    log_pt = -np.logaddexp(0.0, -z)
    pt = np.exp(log_pt)
    one_m = np.exp(-np.logaddexp(0.0, z))  # 1 - pt without cancellation
    at = np.where(onehot, alpha, 1.0 - alpha)
    w = valid[:, None].astype(np.float64)
    loss = -(at * one_m ** gamma * log_pt * w).sum() / norm

    def backward(g):
        dz = at * one_m ** gamma * (gamma * pt * log_pt - one_m)
        dx = np.where(onehot, dz, -dz) * w / norm
        return ((g * dx).astype(cls_logits.dtype),)

    return apply_op(np.asarray(loss, dtype=cls_logits.dtype), (cls_logits,), backward)


def smooth_l1_loss(pred_deltas: Tensor, target_deltas, positives, beta: float = 1.0 / 9.0,
                   normalizer: float | None = None) -> Tensor:
    """Sum over positive anchors of elementwise smooth-L1, over max(1, #positives)."""
    m = pred_deltas.dims[0]
    target = np.asarray(target_deltas, dtype=np.float64).reshape(m, -1)
    pos = np.asarray(positives, dtype=bool).reshape(-1)
    if pos.shape[0] != m or target.shape != pred_deltas.dims:
        raise ShapeError(f"pred {pred_deltas.dims}, target {target.shape}, positives {pos.shape}")
    norm = float(max(1, int(pos.sum())) if normalizer is None else normalizer)
    x = (pred_deltas.data.astype(np.float64) - target) * pos[:, None]
    ax = np.abs(x)
    quad = ax < beta
    loss = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta).sum() / norm

    def backward(g):
        d = np.where(quad, x / beta, np.sign(x)) * pos[:, None] / norm
        return ((g * d).astype(pred_deltas.dtype),)

    return apply_op(np.asarray(loss, dtype=pred_deltas.dtype), (pred_deltas,), backward)
