"""SGD training loop with the two-phase (attention bypassed, then joint) schedule."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..config import DetectConfig
from ..data import flip_horizontal
from ..errors import TrainingError
from ..params import NetParams, sgd_step
from ..tensor import Tensor
from .anchors import assign_targets, generate_anchors
from .losses import focal_loss_with_logits, smooth_l1_loss
from .model import active_param_names, harnet_forward, init_params

TRACE_COLUMNS = ("iter", "focal", "regression", "total", "lr")


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)

    def append(self, it, focal, regression, total, lr):
        self.rows.append((int(it), float(focal), float(regression), float(total), float(lr)))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRACE_COLUMNS.index(name)] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([r[0]] + [repr(v) for v in r[1:]])

    def __len__(self):
        return len(self.rows)


def learning_rate(it: int, config: DetectConfig) -> float:
    """Linear warm-up from lr/3, then /10 at each fraction in ``lr_steps``."""
    tc = config.train
    lr = tc.lr
    if it < tc.warmup_iters:
        lr *= 1.0 / 3.0 + (2.0 / 3.0) * it / tc.warmup_iters
    for step in tc.lr_steps:
        if it >= step * tc.iters:
            lr *= 0.1
    return lr


def phase1_iters(config: DetectConfig) -> int:
    tc = config.train
    if tc.schedule != "incremental" or not (config.attention.spatial or config.attention.channel):
        return 0
    return int(round(tc.iters * tc.phase1_fraction))


def _targets(scene, anchors, config):
    lc = config.loss
    a = assign_targets(anchors, scene.boxes, scene.classes, lc.pos_iou, lc.neg_iou)
    return a.labels, a.deltas


def _color_augment(images: np.ndarray, rng) -> np.ndarray:
    """Permute the RGB channels and invert a random subset of them, per image.

    The synthetic corpus draws every colour channel independently and
    symmetrically about 0.5, so these maps leave its distribution unchanged
    while removing colour as a shortcut for the class.
    """
    n = images.shape[0]
    perm = np.argsort(rng.random((n, 3)), axis=1)
    invert = rng.random((n, 3)) < 0.5
    out = images[np.arange(n)[:, None], perm]
    return np.where(invert[:, :, None, None], 1.0 - out, out).astype(images.dtype)


def _clip_gradients(params: NetParams, names, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.vdot(params[n].grad, params[n].grad)) for n in names))
    if max_norm > 0 and total > max_norm:
        k = max_norm / total
        for n in names:
            params[n].grad *= k
    return total


def train(dataset, config: DetectConfig, params: NetParams | None = None, callback=None):
    """Train on a list of scenes; returns (params, :class:`LossTrace`).

    Phase 1 (first ``phase1_fraction`` of the iterations, incremental schedule
    only) forces spatial masks and channel weights to 1 and leaves their
    parameters untouched; phase 2 trains everything jointly.  The batch loss
    is focal + reg_weight * smooth-L1, both divided by the batch's positive
    count.  ``callback(it, row)`` is invoked after every iteration.
    """
    scenes = list(dataset)
    if not scenes:
        raise ValueError("training needs a non-empty dataset")
    tc, lc = config.train, config.loss
    params = init_params(config) if params is None else params
    size = scenes[0].image.shape[1:]
    anchors = generate_anchors(config, size)
    variants = [scenes, [flip_horizontal(s) for s in scenes] if tc.flip else None]
    targets = [[_targets(s, anchors, config) for s in group] if group else None for group in variants]
    rng = np.random.default_rng([config.seed, 1])
    split = phase1_iters(config)
    names = {True: active_param_names(params, config, bypass=True),
             False: active_param_names(params, config, bypass=False)}
    trace = LossTrace()
    order, cursor = rng.permutation(len(scenes)), 0
    for it in range(tc.iters):
        idx = []
        while len(idx) < tc.batch_size:
            if cursor == len(order):
                order, cursor = rng.permutation(len(scenes)), 0
            take = min(tc.batch_size - len(idx), len(order) - cursor)
            idx.extend(order[cursor:cursor + take])
            cursor += take
        flips = rng.random(len(idx)) < 0.5 if tc.flip else np.zeros(len(idx), dtype=bool)
        flips = flips.astype(np.intp)
        images = np.stack([variants[f][i].image for i, f in zip(idx, flips)])
        if tc.color_augment:
            images = _color_augment(images, rng)
        labels = np.concatenate([targets[f][i][0] for i, f in zip(idx, flips)])
        deltas = np.concatenate([targets[f][i][1] for i, f in zip(idx, flips)])
        norm = max(1, int((labels >= 0).sum()))

        bypass = it < split
        out = harnet_forward(Tensor(images), params, config, bypass=bypass)
        focal = focal_loss_with_logits(out.flat_logits(), labels, lc.alpha, lc.gamma, norm)
        reg = smooth_l1_loss(out.flat_bbox(), deltas, labels >= 0, lc.smooth_l1_beta, norm)
        total = T.add(focal, T.scale(reg, lc.reg_weight))
        lr = learning_rate(it, config)
        if not np.isfinite(total.item()):
            raise TrainingError(f"loss became {total.item()}", iteration=it)
        total.backward()
        _clip_gradients(params, names[bypass], tc.grad_clip)
        sgd_step(params, lr, tc.momentum, tc.weight_decay, names[bypass])
        trace.append(it, focal.item(), reg.item(), total.item(), lr)
        if callback is not None:
            callback(it, trace.rows[-1])
    return params, trace
