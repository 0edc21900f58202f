"""Finite-difference gradient checks of every differentiable op and block, in float64.

Each case builds a scalar objective ``sum(op(...) * R)`` with a fixed random
projection R (so every output element matters), and compares backprop with
central differences.  Inputs are chosen away from non-differentiable points:
ReLU inputs away from 0, max-pool maxima well separated, deformable sampling
positions away from integer coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (AlignedAttentionParams, CLGNParams, CLSEParams, SpatialAttentionParams,
                        aligned_attention_forward, clgn_normalize, clse_weights, spatial_attention_forward)
from .config import DetectConfig
from .conv import ConvSpec, conv2d, deformable_conv2d
from .detector.anchors import assign_targets, generate_anchors
from .detector.losses import focal_loss, focal_loss_with_logits, smooth_l1_loss
from .detector.model import harnet_forward, init_params
from .gradcheck import grad_check
from .tensor import Tensor

ELEMENTWISE_TOL = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CaseResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def _t(rng, *shape, lo=None):
    """float64 tensor; with ``lo``, magnitudes in [lo, 1] with random sign (kept off zero)."""
    if lo is None:
        return Tensor(rng.normal(size=shape))
    mag = rng.uniform(lo, 1.0, size=shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], size=shape))


def _objective(fn, rng):
    """Wrap ``fn`` -> scalar sum(fn() * R) with R drawn once."""
    r = Tensor(rng.normal(size=fn().dims))

    def f():
        return T.sum_all(T.mul(fn(), r))

    return f


def _case(name, tol, fn, inputs, rng, max_coords=None):
    t0 = time.perf_counter()
    err = grad_check(_objective(fn, rng), inputs, eps=1e-6, max_coords=max_coords, rng=rng)
    return CaseResult(name, err, tol, time.perf_counter() - t0)


def _elementwise_cases(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    yield _case("add", ELEMENTWISE_TOL, lambda: T.add(a, b), [a, b], rng)
    yield _case("sub", ELEMENTWISE_TOL, lambda: T.sub(a, b), [a, b], rng)
    yield _case("mul", ELEMENTWISE_TOL, lambda: T.mul(a, b), [a, b], rng)
    yield _case("scale", ELEMENTWISE_TOL, lambda: T.scale(a, -1.7), [a], rng)
    r = _t(rng, 3, 4, lo=0.05)
    yield _case("relu", ELEMENTWISE_TOL, lambda: T.relu(r), [r], rng)
    s = _t(rng, 3, 4)
    yield _case("sigmoid", ELEMENTWISE_TOL, lambda: T.sigmoid(s), [s], rng)


def _structural_cases(rng):
    x = _t(rng, 2, 3, 4, 5)
    yield _case("reshape", DEFAULT_TOL, lambda: T.reshape(x, (6, 20)), [x], rng)
    yield _case("transpose", DEFAULT_TOL, lambda: T.transpose(x, (0, 2, 3, 1)), [x], rng)
    y = _t(rng, 2, 2, 4, 5)
    yield _case("concat", DEFAULT_TOL, lambda: T.concat([x, y], axis=1), [x, y], rng)
    yield _case("take", DEFAULT_TOL, lambda: T.take(x, 3, 1, 4), [x], rng)
    u = _t(rng, 2, 3, 3, 2)
    yield _case("upsample_nearest", DEFAULT_TOL, lambda: T.upsample_nearest(u, 5, 4), [u], rng)
    # a permutation of well-spaced values: the maximum is unique by a wide margin
    gp = Tensor(rng.permutation(np.linspace(-1, 1, 2 * 3 * 4 * 4)).reshape(2, 3, 4, 4))
    yield _case("global_max_pool", DEFAULT_TOL, lambda: T.global_max_pool(gp), [gp], rng)
    v, w, bias = _t(rng, 4, 6), _t(rng, 5, 6), _t(rng, 5)
    yield _case("linear", DEFAULT_TOL, lambda: T.linear(v, w, bias), [v, w, bias], rng)
    mask = Tensor(rng.uniform(0.1, 0.9, size=(2, 1, 4, 5)))
    yield _case("scale_spatial", DEFAULT_TOL, lambda: T.scale_spatial(mask, x), [mask, x], rng)
    cw = Tensor(rng.uniform(0.1, 0.9, size=(2, 3)))
    yield _case("scale_channels", DEFAULT_TOL, lambda: T.scale_channels(cw, x), [cw, x], rng)
    yield _case("sum_all", ELEMENTWISE_TOL, lambda: T.reshape(T.sum_all(x), (1,)), [x], rng)


def _conv_cases(rng):
    for stride, pad, dil, k in ((1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (2, 0, 1, 1), (1, 5, 5, 3)):
        x, w, b = _t(rng, 2, 3, 7, 6), _t(rng, 4, 3, k, k), _t(rng, 4)
        spec = ConvSpec(3, 4, (k, k), stride, pad, dil)
        yield _case(f"conv2d[s{stride},p{pad},d{dil},k{k}]", DEFAULT_TOL,
                    lambda x=x, w=w, b=b, spec=spec: conv2d(x, w, b, spec), [x, w, b], rng)
    x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    spec = ConvSpec(3, 4, (3, 3), 1, 1, 1)
    # integer part in {-1, 0, 1}, fractional part in [0.2, 0.8]: off the bilinear kinks
    off = Tensor(rng.integers(-1, 2, size=(2, 18, 5, 5)) + rng.uniform(0.2, 0.8, size=(2, 18, 5, 5)))
    yield _case("deformable_conv2d", DEFAULT_TOL, lambda: deformable_conv2d(x, w, b, off, spec),
                [x, w, b, off], rng)


def _loss_cases(rng):
    m, k = 12, 3
    labels = rng.integers(-2, k, size=m)
    labels[0] = 1
    probs = Tensor(rng.uniform(0.05, 0.95, size=(m, k)))
    logits = _t(rng, m, k)
    for gamma in (0.0, 0.5, 2.0):
        yield _case(f"focal_loss[g={gamma}]", DEFAULT_TOL,
                    lambda g=gamma: T.reshape(focal_loss(probs, labels, 0.25, g), (1,)), [probs], rng)
        yield _case(f"focal_loss_with_logits[g={gamma}]", DEFAULT_TOL,
                    lambda g=gamma: T.reshape(focal_loss_with_logits(logits, labels, 0.25, g), (1,)),
                    [logits], rng)
    pred = _t(rng, m, 4)
    target = pred.data + rng.choice([-1.0, 1.0], size=(m, 4)) * rng.uniform(0.02, 0.5, size=(m, 4))
    target[::3] = pred.data[::3] + 0.07  # quadratic zone, |x| < beta
    pos = labels >= 0
    yield _case("smooth_l1_loss", DEFAULT_TOL,
                lambda: T.reshape(smooth_l1_loss(pred, target, pos, 1 / 9), (1,)), [pred], rng)


def _block_cases(rng):
    feats = [_t(rng, 2, 8, 6, 6), _t(rng, 2, 8, 3, 3)]
    sp = SpatialAttentionParams.init(8, 4, (1, 2, 1), rng=rng, std=0.3, dtype=np.float64)
    for b in sp.biases:
        b.data[:] = rng.uniform(0.2, 0.5, size=b.dims)
    yield _case("spatial_attention", DEFAULT_TOL, lambda: spatial_attention_forward(feats[0], sp),
                [feats[0]] + sp.weights + sp.biases, rng)

    gn = CLGNParams.init(8, 4, 1e-5, dtype=np.float64)
    gn.gamma.data[:] = rng.uniform(0.5, 1.5, size=gn.gamma.dims)
    gn.beta.data[:] = rng.normal(size=gn.beta.dims)
    yield _case("clgn", DEFAULT_TOL, lambda: T.concat([T.reshape(o, (2, 8, -1)) for o in clgn_normalize(feats, gn)],
                                                      axis=2),
                feats + [gn.gamma, gn.beta], rng)

    levels = [Tensor(rng.permutation(np.linspace(-1, 1, 2 * 8 * n * n)).reshape(2, 8, n, n)) for n in (4, 2, 1)]
    cl = CLSEParams.init(8, 3, 4, ("cls",), rng=rng, std=0.5, dtype=np.float64)
    br = cl.branches["cls"]
    br.b1.data[:] = rng.uniform(0.3, 0.6, size=br.b1.dims)
    yield _case("clse", DEFAULT_TOL, lambda: clse_weights(levels, cl, "cls"),
                levels + [br.w1, br.b1, br.w2, br.b2], rng)

    xa = _t(rng, 1, 8, 5, 5)
    aa = AlignedAttentionParams.init(8, rng=rng, dtype=np.float64)
    aa.offset_w.data[:] = rng.normal(0.0, 0.05, size=aa.offset_w.dims)
    aa.offset_b.data[:] = rng.uniform(0.3, 0.7, size=aa.offset_b.dims)
    aa.reduce_b.data[:] = 0.5
    aa.deform_b.data[:] = 0.5
    tensors = [xa] + list(aa.named().values())
    yield _case("aligned_attention", DEFAULT_TOL, lambda: aligned_attention_forward(xa, aa), tensors, rng)


def tiny_config() -> DetectConfig:
    """A narrow float64-friendly network for checking the whole model on 8×8 inputs."""
    return DetectConfig().replace(**{
        "model.stem_channels": 4, "model.backbone_channels": [4, 8, 8], "model.pyramid_width": 8,
        "model.head_width": 8, "model.head_convs": 2, "model.spatial_channels": 4,
        "model.dilations": [1, 2, 1], "model.clgn_group_size": 4, "model.clse_reduction": 4,
        "model.head_init_std": 0.3, "model.prior_prob": 0.3,
    })


def _full_model_case(rng, max_coords=2):
    cfg = tiny_config()
    params = init_params(cfg, seed=3, dtype=np.float64)
    for name, t in params.items():
        if name.endswith(".b"):
            # positive biases keep ReLU inputs off 0; fractional offsets keep sampling off the grid
            t.data[:] = rng.uniform(0.3, 0.7, size=t.dims)
        if ".offset." in name and name.endswith(".w"):
            t.data[:] = rng.normal(0.0, 0.05, size=t.dims)
    image = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 8, 8)))
    anchors = generate_anchors(cfg, 8)
    gt = np.array([[1.0, 1.5, 7.0, 6.5]])
    assign = assign_targets(anchors, gt, [1], 0.5, 0.4)
    lc = cfg.loss

    def loss():
        out = harnet_forward(image, params, cfg)
        fl = focal_loss(out.flat_probs(), assign.labels, lc.alpha, lc.gamma)
        rg = smooth_l1_loss(out.flat_bbox(), assign.deltas, assign.positive, lc.smooth_l1_beta)
        return T.add(fl, rg)

    inputs = [image] + [params[n] for n in params.names()]
    t0 = time.perf_counter()
    err = grad_check(loss, inputs, eps=1e-6, max_coords=max_coords, rng=rng)
    return CaseResult("harnet_head+focal[8x8]", err, DEFAULT_TOL, time.perf_counter() - t0)


def run_suite(seed: int = 0) -> list:
    """Every case, in a fixed order; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    results = []
    for group in (_elementwise_cases, _structural_cases, _conv_cases, _loss_cases, _block_cases):
        results.extend(group(rng))
    results.append(_full_model_case(rng))
    return results
