import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnet import tensor as T
from harnet.attention import (AlignedAttentionParams, CLGNParams, CLSEParams, SpatialAttentionParams,
                              aligned_attention_forward, apply_channel_attention, apply_spatial_attention,
                              clgn_normalize, clse_weights, spatial_attention_forward)
from harnet.conv import ConvSpec, conv2d
from harnet.errors import ShapeError
from harnet.gradcheck import grad_check
from harnet.tensor import Tensor


def _levels(rng, n=2, c=8, sizes=(6, 3, 2)):
    return [Tensor(rng.normal(size=(n, c, s, s))) for s in sizes]


# ------------------------------------------------------------------ spatial


def test_zero_stack_gives_half_mask():
    sp = SpatialAttentionParams.init(4, 4, std=0.0, dtype=np.float64)
    mask = spatial_attention_forward(Tensor(np.random.default_rng(0).normal(size=(1, 4, 5, 7))), sp)
    assert mask.dims == (1, 1, 5, 7)
    assert np.all(mask.data == 0.5)


@settings(max_examples=10, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9))
def test_mask_keeps_spatial_size_and_range(h, w):
    sp = SpatialAttentionParams.init(3, 4, std=1.0, rng=np.random.default_rng(h * 10 + w), dtype=np.float64)
    mask = spatial_attention_forward(Tensor(np.random.default_rng(w).normal(size=(2, 3, h, w))), sp).data
    assert mask.shape == (2, 1, h, w)
    assert np.all((mask > 0) & (mask < 1))


def test_receptive_field_is_23():
    rng = np.random.default_rng(1)
    sp = SpatialAttentionParams.init(2, 3, (1, 2, 5, 2, 1), rng=rng, dtype=np.float64)
    for w, b in zip(sp.weights, sp.biases):
        # positive weights and biases keep every relu open, so support is the full receptive field
        w.data[:] = rng.uniform(0.1, 0.3, size=w.dims)
        b.data[:] = 0.1
    sp.weights[-1].data *= 0.01
    size, c = 41, 20
    x = np.zeros((1, 2, size, size))
    base = spatial_attention_forward(Tensor(x), sp).data[0, 0]
    x[0, :, c, c] = 1.0
    diff = spatial_attention_forward(Tensor(x), sp).data[0, 0] - base
    rows, cols = np.nonzero(np.abs(diff) > 0)
    assert rows.max() - rows.min() + 1 == 23 and cols.max() - cols.min() + 1 == 23


def test_dilation_schedule_validation():
    with pytest.raises(ShapeError):
        SpatialAttentionParams.init(4, 4, (1, 2, 5))
    with pytest.raises(ShapeError):
        SpatialAttentionParams.init(4, 4, (5, 1, 5))


def test_apply_spatial_attention():
    f = Tensor(np.random.default_rng(2).normal(size=(1, 3, 4, 4)))
    ones = np.ones((1, 1, 4, 4))
    np.testing.assert_array_equal(apply_spatial_attention(Tensor(ones), f).data, f.data)
    assert np.all(apply_spatial_attention(Tensor(0 * ones), f).data == 0)
    half = ones.copy()
    half[0, 0, 1, 2] = 0.5
    out = apply_spatial_attention(Tensor(half), f).data
    expect = f.data.copy()
    expect[0, :, 1, 2] *= 0.5
    np.testing.assert_array_equal(out, expect)


# --------------------------------------------------------------------- CLGN


def _gn(c, group, eps=0.0):
    return CLGNParams.init(c, group, eps, dtype=np.float64)


def test_clgn_two_element_group():
    out = clgn_normalize([Tensor(np.array([3.0, 4.0]).reshape(1, 2, 1, 1))], _gn(2, 2))
    np.testing.assert_allclose(out[0].data.ravel(), [3 / np.sqrt(12.5), 4 / np.sqrt(12.5)], rtol=1e-12)
    np.testing.assert_allclose(out[0].data.ravel(), [0.848528137, 1.131370850], rtol=1e-8)


def test_clgn_group_rms_is_one_across_levels():
    levels = _levels(np.random.default_rng(3))
    out = clgn_normalize(levels, _gn(8, 4, 1e-12))
    for n in range(2):
        for g in range(2):
            vals = np.concatenate([o.data[n, 4 * g:4 * g + 4].ravel() for o in out])
            assert abs(np.sqrt(np.mean(vals ** 2)) - 1.0) <= 1e-6


def test_clgn_rms_is_joint_not_per_level():
    levels = _levels(np.random.default_rng(4))
    levels[0].data *= 5.0
    out = clgn_normalize(levels, _gn(8, 8))
    per_level = [np.sqrt(np.mean(o.data[0] ** 2)) for o in out]
    # one shared divisor: the louder level stays louder
    assert per_level[0] > 2 * per_level[1]


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_clgn_scale_invariance(alpha, seed):
    levels = _levels(np.random.default_rng(seed), n=1)
    gn = _gn(8, 4)
    a = clgn_normalize(levels, gn)
    b = clgn_normalize([Tensor(alpha * lv.data) for lv in levels], gn)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.data, y.data, atol=1e-6)


def test_clgn_affine():
    levels = _levels(np.random.default_rng(5), n=1)
    gn = _gn(8, 4)
    plain = clgn_normalize(levels, gn)
    gn.gamma.data[:] = [2.0, 3.0]
    gn.beta.data[:] = [1.0, -1.0]
    shifted = clgn_normalize(levels, gn)
    np.testing.assert_allclose(shifted[1].data[0, :4], 2 * plain[1].data[0, :4] + 1)
    np.testing.assert_allclose(shifted[1].data[0, 4:], 3 * plain[1].data[0, 4:] - 1)


def test_clgn_images_are_independent():
    levels = _levels(np.random.default_rng(6))
    gn = _gn(8, 4, 1e-5)
    both = clgn_normalize(levels, gn)
    first = clgn_normalize([Tensor(lv.data[:1]) for lv in levels], gn)
    for x, y in zip(both, first):
        np.testing.assert_allclose(x.data[:1], y.data, rtol=1e-12)


def test_clgn_errors():
    with pytest.raises(ShapeError):
        clgn_normalize([], _gn(8, 4))
    with pytest.raises(ShapeError):
        clgn_normalize([Tensor(np.ones((1, 8, 2, 2))), Tensor(np.ones((1, 4, 2, 2)))], _gn(8, 4))


def test_clgn_gradients():
    rng = np.random.default_rng(7)
    levels = _levels(rng)
    gn = _gn(8, 4, 1e-5)
    gn.gamma.data[:] = rng.uniform(0.5, 1.5, size=2)
    r = [rng.normal(size=lv.dims) for lv in levels]

    def f():
        outs = clgn_normalize(levels, gn)
        total = T.dot(outs[0], r[0])
        for o, ri in zip(outs[1:], r[1:]):
            total = T.add(total, T.dot(o, ri))
        return total

    assert grad_check(f, levels + [gn.gamma, gn.beta], eps=1e-6) <= 1e-5


# --------------------------------------------------------------------- CLSE


def test_clse_zero_excite_gives_half():
    cl = CLSEParams.init(8, 3, 4, rng=np.random.default_rng(0), dtype=np.float64)
    cl.branches["cls"].w2.data[:] = 0
    w = clse_weights(_levels(np.random.default_rng(1)), cl, "cls")
    assert w.dims == (2, 8) and np.all(w.data == 0.5)


def test_clse_separate_weights_per_task():
    rng = np.random.default_rng(2)
    cl = CLSEParams.init(8, 3, 4, rng=rng, std=0.5, dtype=np.float64)
    levels = _levels(rng)
    assert not np.allclose(clse_weights(levels, cl, "cls").data, clse_weights(levels, cl, "bbox").data)


def test_clse_duplicate_level_pools_identically():
    rng = np.random.default_rng(3)
    levels = _levels(rng, sizes=(4, 2))
    pooled = T.concat([T.global_max_pool(lv) for lv in levels + [levels[1]]], axis=1).data
    assert pooled.shape == (2, 24)
    np.testing.assert_array_equal(pooled[:, 8:16], pooled[:, 16:24])


def test_clse_level_symmetric_squeeze_is_order_invariant():
    rng = np.random.default_rng(4)
    levels = _levels(rng)
    cl = CLSEParams.init(8, 3, 4, rng=rng, std=0.5, dtype=np.float64)
    br = cl.branches["cls"]
    block = rng.normal(size=(br.w1.dims[0], 8))
    br.w1.data[:] = np.tile(block, (1, 3))
    a = clse_weights(levels, cl, "cls").data
    b = clse_weights(levels[::-1], cl, "cls").data
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_clse_shape_errors():
    cl = CLSEParams.init(8, 3, 4, dtype=np.float64)
    with pytest.raises(ShapeError):
        clse_weights(_levels(np.random.default_rng(0), sizes=(4, 2)), cl, "cls")
    with pytest.raises(ShapeError):
        clse_weights([Tensor(np.ones((1, 8, 2, 2))), Tensor(np.ones((1, 4, 2, 2)))], cl, "cls")


def test_clse_gradients():
    rng = np.random.default_rng(5)
    levels = [Tensor(rng.permutation(np.linspace(-1, 1, 2 * 8 * s * s)).reshape(2, 8, s, s)) for s in (4, 2, 1)]
    cl = CLSEParams.init(8, 3, 4, ("cls",), rng=rng, std=0.5, dtype=np.float64)
    br = cl.branches["cls"]
    br.b1.data[:] = 0.4
    r = rng.normal(size=(2, 8))
    assert grad_check(lambda: T.dot(clse_weights(levels, cl, "cls"), r),
                      levels + [br.w1, br.b1, br.w2, br.b2], eps=1e-6) <= 1e-5


def test_apply_channel_attention():
    f = Tensor(np.random.default_rng(6).normal(size=(2, 3, 2, 2)))
    np.testing.assert_array_equal(apply_channel_attention(Tensor(np.ones(3)), f).data, f.data)
    assert np.all(apply_channel_attention(Tensor(np.zeros(3)), f).data == 0)
    out = apply_channel_attention(Tensor(np.array([0.5, 1.0, 1.0])), f).data
    np.testing.assert_array_equal(out[:, 0], 0.5 * f.data[:, 0])
    np.testing.assert_array_equal(out[:, 1:], f.data[:, 1:])


# ------------------------------------------------------------------ aligned


def test_aligned_zero_expand_is_identity():
    rng = np.random.default_rng(7)
    aa = AlignedAttentionParams.init(8, rng=rng, dtype=np.float64)
    aa.expand_w.data[:] = 0
    x = Tensor(rng.normal(size=(1, 8, 5, 5)))
    np.testing.assert_array_equal(aligned_attention_forward(x, aa).data, x.data)


def test_aligned_zero_offsets_equal_standard_conv_block():
    rng = np.random.default_rng(8)
    aa = AlignedAttentionParams.init(8, rng=rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(2, 8, 5, 5)))
    r = T.relu(conv2d(x, aa.reduce_w, aa.reduce_b, ConvSpec(8, 2, (1, 1))))
    d = T.relu(conv2d(r, aa.deform_w, aa.deform_b, ConvSpec(2, 2, (3, 3), 1, 1)))
    ref = x.data + conv2d(d, aa.expand_w, aa.expand_b, ConvSpec(2, 8, (1, 1))).data
    assert np.abs(aligned_attention_forward(x, aa).data - ref).max() <= 1e-6


def test_aligned_requires_channels_divisible_by_4():
    with pytest.raises(ShapeError):
        AlignedAttentionParams.init(6)
    aa = AlignedAttentionParams.init(8, dtype=np.float64)
    with pytest.raises(ShapeError):
        aligned_attention_forward(Tensor(np.ones((1, 6, 3, 3))), aa)


def test_aligned_gradients_with_offset_path():
    rng = np.random.default_rng(9)
    aa = AlignedAttentionParams.init(8, rng=rng, dtype=np.float64)
    aa.offset_w.data[:] = rng.normal(0, 0.05, size=aa.offset_w.dims)
    aa.offset_b.data[:] = rng.uniform(0.3, 0.7, size=aa.offset_b.dims)
    aa.reduce_b.data[:] = 0.5
    aa.deform_b.data[:] = 0.5
    x = Tensor(rng.normal(size=(1, 8, 4, 4)))
    r = rng.normal(size=(1, 8, 4, 4))
    assert grad_check(lambda: T.dot(aligned_attention_forward(x, aa), r),
                      [x] + list(aa.named().values()), eps=1e-6) <= 1e-4
