import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnet import tensor as T
from harnet.config import DetectConfig
from harnet.data import generate_scenes
from harnet.detector import (IGNORE, NEGATIVE, assign_targets, baseline_forward, decode_box, encode_box,
                             focal_loss, focal_loss_with_logits, generate_anchors, grid_sizes, harnet_forward,
                             init_params, iou, smooth_l1_loss)
from harnet.detector.model import active_param_names, head_forward
from harnet.detector.train import learning_rate, phase1_iters, train
from harnet.errors import ShapeError, TrainingError
from harnet.gradsuite import tiny_config
from harnet.structures import FeaturePyramid
from harnet.tensor import Tensor, no_grad


def _off(cfg):
    return cfg.replace(**{"attention.spatial": False, "attention.channel": False, "attention.aligned": False})


# ------------------------------------------------------------------ anchors


def test_first_p3_anchor():
    a = generate_anchors(DetectConfig(), 64)[0][0]
    np.testing.assert_allclose(a, [3.5 - 16, 3.5 - 16, 3.5 + 16, 3.5 + 16])


def test_anchor_counts_and_grids():
    anchors = generate_anchors(DetectConfig(), 64)
    assert grid_sizes(64) == [(8, 8), (4, 4), (2, 2), (1, 1), (1, 1)]
    assert [len(a) for a in anchors] == [384, 96, 24, 6, 6]


def test_ratio_preserves_area():
    a = generate_anchors(DetectConfig(), 64)[1][:6]
    w, h = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    base = 4 * 16
    np.testing.assert_allclose(w[:3] * h[:3], base ** 2, rtol=1e-6)
    np.testing.assert_allclose(w[3:] * h[3:], 2 * base ** 2, rtol=1e-6)
    np.testing.assert_allclose(h[:3] / w[:3], [1.0, 0.5, 2.0])


def test_anchor_size_span():
    sides = [np.sqrt((a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])) for a in generate_anchors(DetectConfig(), 64)]
    assert sides[0].min() == pytest.approx(2 ** 5) and sides[-1].max() == pytest.approx(2 ** 9.5)


# ---------------------------------------------------------------------- IoU


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert iou((0, 0, 10, 10), (5, 5, 15, 15)) == pytest.approx(1 / 7, abs=1e-12)


boxes = st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(1, 30), st.floats(1, 30)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=100, deadline=None)
@given(a=boxes, b=boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a))


# ------------------------------------------------------------- assignment


def test_assign_empty_gt_all_negative():
    a = assign_targets(generate_anchors(DetectConfig(), 64), np.zeros((0, 4)), [])
    assert np.all(a.labels == NEGATIVE) and a.num_positive == 0


def test_assign_identical_anchor_positive():
    anchors = np.array([[0, 0, 10, 10], [30, 30, 40, 40]], dtype=float)
    a = assign_targets(anchors, [[0, 0, 10, 10]], [2])
    assert a.labels.tolist() == [2, NEGATIVE]
    np.testing.assert_allclose(a.deltas[0], 0.0)


def test_assign_thresholds():
    gt = np.array([[0.0, 0.0, 10.0, 10.0]])
    # same height, widths chosen for IoU 0.55, 0.45, 0.2
    anchors = np.array([[0, 0, 5.5, 10], [0, 0, 4.5, 10], [0, 0, 2, 10]], dtype=float)
    a = assign_targets(anchors, gt, [1])
    np.testing.assert_allclose(a.max_iou, [0.55, 0.45, 0.2])
    assert a.labels.tolist() == [1, IGNORE, NEGATIVE]


def test_assign_rescues_low_overlap_gt():
    anchors = np.array([[0, 0, 10, 10], [0, 0, 2.5, 10]], dtype=float)
    a = assign_targets(anchors, [[0, 0, 2, 10]], [0])
    assert a.labels.tolist() == [NEGATIVE, 0]


def test_assign_positive_invariant_on_real_layout():
    scenes = generate_scenes(3, 20)
    anchors = generate_anchors(DetectConfig(), 64)
    flat = np.concatenate(anchors)
    for s in scenes:
        a = assign_targets(anchors, s.boxes, s.classes)
        rescued = set(np.argmax(np.array([[iou(x, g) for g in s.boxes] for x in flat]), axis=0))
        for idx in np.nonzero(a.positive)[0]:
            assert a.max_iou[idx] >= 0.5 or idx in rescued
        assert np.all(a.max_iou[a.labels == NEGATIVE] < 0.4)


# --------------------------------------------------------------- encoding


def test_encode_identity_and_log_ratio():
    anchor = np.array([0.0, 0.0, 10.0, 10.0])
    np.testing.assert_allclose(encode_box(anchor, anchor), 0.0)
    wide = np.array([-5.0, 0.0, 15.0, 10.0])
    assert encode_box(anchor, wide)[2] == pytest.approx(math.log(2))


def test_encode_decode_round_trip():
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 100, size=(1000, 2, 2))
    wh = rng.uniform(2, 80, size=(1000, 2, 2))
    anchors = np.concatenate([xy[:, 0], xy[:, 0] + wh[:, 0]], axis=1)
    gts = np.concatenate([xy[:, 1], xy[:, 1] + wh[:, 1]], axis=1)
    back = decode_box(anchors, encode_box(anchors, gts))
    assert np.abs(back - gts).max() <= 1e-5


def test_decode_clips_to_image():
    out = decode_box(np.array([50.0, 50.0, 70.0, 70.0]), np.array([0.0, 0.0, 1.0, 1.0]), image_size=64)
    assert out.min() >= 0 and out.max() <= 64


# ----------------------------------------------------------------- losses


def test_focal_single_positive_value():
    loss = focal_loss(Tensor(np.array([[0.9]])), [0], alpha=0.25, gamma=2.0)
    assert loss.item() == pytest.approx(0.25 * 0.01 * -math.log(0.9), rel=1e-12)
    assert loss.item() == pytest.approx(2.6341e-4, abs=1e-4)


def test_focal_degenerates_to_cross_entropy():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.05, 0.95, size=(20, 3))
    labels = rng.integers(-1, 3, size=20)
    onehot = np.zeros((20, 3), dtype=bool)
    onehot[np.nonzero(labels >= 0)[0], labels[labels >= 0]] = True
    npos = max(1, int((labels >= 0).sum()))
    bce = -np.where(onehot, np.log(p), np.log(1 - p)).sum() / npos
    pos_ce = -np.log(p[onehot]).sum() / npos
    # alpha weights positives by alpha and negatives by 1 - alpha
    assert focal_loss(Tensor(p), labels, 1.0, 0.0).item() == pytest.approx(pos_ce, rel=1e-10)
    assert focal_loss(Tensor(p), labels, 0.5, 0.0).item() == pytest.approx(0.5 * bce, rel=1e-10)


def test_focal_all_ignored_is_zero():
    assert focal_loss(Tensor(np.full((5, 2), 0.3)), [IGNORE] * 5).item() == 0.0


def test_focal_logits_matches_probabilities():
    rng = np.random.default_rng(2)
    z = rng.normal(scale=3, size=(30, 3))
    labels = rng.integers(-2, 3, size=30)
    a = focal_loss_with_logits(Tensor(z), labels).item()
    b = focal_loss(Tensor(1 / (1 + np.exp(-z))), labels).item()
    assert a == pytest.approx(b, rel=1e-9)


def test_focal_logits_stable_at_extremes():
    loss = focal_loss_with_logits(Tensor(np.array([[-800.0], [800.0]])), [0, -1])
    assert np.isfinite(loss.item()) and loss.item() > 100


def test_smooth_l1_values():
    beta = 1 / 9
    zero = smooth_l1_loss(Tensor(np.ones((2, 4))), np.ones((2, 4)), [True, True])
    assert zero.item() == 0.0
    knee = smooth_l1_loss(Tensor(np.array([[beta, 0, 0, 0]])), np.zeros((1, 4)), [True])
    assert knee.item() == pytest.approx(0.5 * beta)
    one = smooth_l1_loss(Tensor(np.array([[-1.0, 0, 0, 0]])), np.zeros((1, 4)), [True])
    assert one.item() == pytest.approx(1 - 0.5 / 9)


def test_smooth_l1_ignores_non_positives_and_normalizes():
    pred = Tensor(np.array([[1.0, 0, 0, 0], [5.0, 0, 0, 0], [1.0, 0, 0, 0]]))
    loss = smooth_l1_loss(pred, np.zeros((3, 4)), [True, False, True])
    assert loss.item() == pytest.approx(1 - 0.5 / 9)


def test_smooth_l1_shape_error():
    with pytest.raises(ShapeError):
        smooth_l1_loss(Tensor(np.ones((2, 4))), np.ones((3, 4)), [True, True])


# ------------------------------------------------------------------ model


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    return cfg, init_params(cfg, seed=1, dtype=np.float64)


def test_grid_strides_for_64px_input():
    cfg = DetectConfig()
    params = init_params(cfg)
    with no_grad():
        out = harnet_forward(Tensor(np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)), params, cfg)
    assert out.strides == [8, 16, 32, 64, 128]
    assert [p.dims[2:] for p in out.cls_probs] == [(8, 8), (4, 4), (2, 2), (1, 1), (1, 1)]
    assert all(p.dims[1] == 6 * 3 for p in out.cls_probs)
    probs = np.concatenate([p.data.ravel() for p in out.cls_probs])
    assert probs.min() > 0.005 and probs.max() < 0.02


def test_attention_off_equals_baseline(tiny):
    cfg, params = tiny
    off = _off(cfg)
    img = Tensor(np.random.default_rng(1).random((2, 3, 16, 16)))
    a, b = harnet_forward(img, params, off), baseline_forward(img, params, off)
    for x, y in zip(a.cls_logits + a.bbox, b.cls_logits + b.bbox):
        np.testing.assert_array_equal(x.data, y.data)


def test_head_is_shared_across_levels(tiny):
    cfg, params = tiny
    cfg = cfg.replace(**{"attention.channel": False})
    rng = np.random.default_rng(2)
    levels = [Tensor(rng.normal(size=(1, 8, s, s))) for s in (4, 2, 1, 1, 1)]
    fwd = head_forward(FeaturePyramid(levels, [8, 16, 32, 64, 128]), params, cfg)
    rev = head_forward(FeaturePyramid(levels[::-1], [128, 64, 32, 16, 8]), params, cfg)
    for i in range(5):
        np.testing.assert_allclose(fwd.cls_logits[i].data, rev.cls_logits[4 - i].data, rtol=1e-12)


def test_forward_rejects_bad_images(tiny):
    cfg, params = tiny
    with pytest.raises(ShapeError):
        harnet_forward(Tensor(np.ones((1, 3, 12, 16))), params, cfg)
    with pytest.raises(ShapeError):
        harnet_forward(Tensor(np.ones((1, 1, 16, 16))), params, cfg)


def test_empty_gt_losses(tiny):
    cfg, params = tiny
    anchors = generate_anchors(cfg, 16)
    a = assign_targets(anchors, np.zeros((0, 4)), [])
    out = harnet_forward(Tensor(np.random.default_rng(4).random((1, 3, 16, 16))), params, cfg)
    fl = focal_loss_with_logits(out.flat_logits(), a.labels)
    rg = smooth_l1_loss(out.flat_bbox(), a.deltas, a.positive)
    assert rg.item() == 0.0 and np.isfinite(fl.item())


def test_active_names_follow_toggles(tiny):
    cfg, params = tiny
    full = set(active_param_names(params, cfg))
    bypass = set(active_param_names(params, cfg, bypass=True))
    off = set(active_param_names(params, _off(cfg)))
    assert any(n.startswith("attn.") for n in full)
    assert not any(n.startswith("attn.") for n in bypass)
    assert not any(n.startswith(("attn.", "aligned.")) or ".clgn" in n or ".extra." in n for n in off)


# ------------------------------------------------------------------ train


def _tiny_train_cfg(iters=6, **kw):
    over = {"train.iters": iters, "train.batch_size": 2, "train.warmup_iters": 2, **kw}
    return tiny_config().replace(**over)


@pytest.fixture(scope="module")
def tiny_scenes():
    return generate_scenes(0, 6, image_size=32, min_size=6, max_size=16)


def test_lr_zero_leaves_params(tiny_scenes):
    cfg = _tiny_train_cfg(**{"train.lr": 0.0})
    before = init_params(cfg)
    after, trace = train(tiny_scenes, cfg, before.copy())
    assert after.equal(before) and len(trace) == 6


def test_training_is_deterministic(tiny_scenes):
    cfg = _tiny_train_cfg()
    _, a = train(tiny_scenes, cfg)
    _, b = train(tiny_scenes, cfg)
    assert a.rows == b.rows


def test_phase_split_freezes_attention(tiny_scenes):
    cfg = _tiny_train_cfg(iters=4, **{"train.phase1_fraction": 1.0})
    before = init_params(cfg)
    after, _ = train(tiny_scenes, cfg, before.copy())
    for name in before.names():
        same = np.array_equal(before[name].data, after[name].data)
        assert same == name.startswith("attn."), name


def test_phase_lengths():
    cfg = DetectConfig()
    assert phase1_iters(cfg) == 1400
    assert phase1_iters(cfg.replace(**{"train.schedule": "end_to_end"})) == 0
    assert phase1_iters(_off(cfg)) == 0


def test_learning_rate_schedule():
    cfg = DetectConfig()
    assert learning_rate(0, cfg) == pytest.approx(0.01 / 3)
    assert learning_rate(100, cfg) == pytest.approx(0.01)
    assert learning_rate(1400, cfg) == pytest.approx(0.01)  # phase 2 starts at full rate
    assert learning_rate(1700, cfg) == pytest.approx(0.001)
    assert learning_rate(1999, cfg) == pytest.approx(0.0001)


def test_color_augment_permutes_and_inverts_channels():
    from harnet.detector.train import _color_augment
    images = np.random.default_rng(1).random((5, 3, 4, 4)).astype(np.float32)
    out = _color_augment(images, np.random.default_rng(2))
    assert out.dtype == np.float32 and out.shape == images.shape
    for img, aug in zip(images, out):
        sources = []
        for ch in aug:
            match = [k for k in range(3) if np.allclose(ch, img[k]) or np.allclose(ch, 1 - img[k])]
            assert len(match) == 1
            sources.append(match[0])
        assert sorted(sources) == [0, 1, 2]


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")  # NaN is injected on purpose
def test_divergence_raises_with_iteration(tiny_scenes):
    cfg = _tiny_train_cfg(iters=3)
    params = init_params(cfg)
    params["head.cls.pred.b"].data[:] = np.nan
    with pytest.raises(TrainingError) as exc:
        train(tiny_scenes, cfg, params)
    assert exc.value.iteration == 0


def test_train_rejects_empty_dataset():
    with pytest.raises(ValueError):
        train([], _tiny_train_cfg())


def test_training_reduces_loss(tiny_scenes):
    cfg = _tiny_train_cfg(iters=40, **{"train.lr": 0.01})
    _, trace = train(tiny_scenes[:2], cfg)
    total = trace.column("total")
    assert total[-5:].mean() < 0.7 * total[:5].mean()


def test_head_gradients_reach_backbone(tiny):
    cfg, params = tiny
    p = params.copy()
    anchors = generate_anchors(cfg, 16)
    a = assign_targets(anchors, [[2.0, 2.0, 14.0, 12.0]], [1])
    out = harnet_forward(Tensor(np.random.default_rng(5).random((1, 3, 16, 16))), p, cfg)
    T.add(focal_loss_with_logits(out.flat_logits(), a.labels),
          smooth_l1_loss(out.flat_bbox(), a.deltas, a.positive)).backward()
    for name in ("backbone.stem0.w", "aligned.c4.offset.w", "attn.spatial.conv0.w", "attn.clse.cls.w1"):
        assert p[name].grad is not None and np.abs(p[name].grad).max() > 0, name
