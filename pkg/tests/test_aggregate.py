import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from nnfield import io
from nnfield.aggregate import (TAP_OFFSETS, DynamicAggregator, bilinear_sample, delta_kernel,
                               dynamic_aggregate, fuse_multiscale, predict_offsets,
                               softmax_weights, standard_aggregate)


def ident(h, w):
    return np.stack(np.meshgrid(np.arange(h), np.arange(w), indexing="ij"), -1)


def naive_standard(v, h, w33):
    c, hv, wv = v.shape
    out = np.zeros((c,) + h.shape[:2])
    for r in range(h.shape[0]):
        for cc in range(h.shape[1]):
            for j, (dy, dx) in enumerate(TAP_OFFSETS):
                y = min(max(h[r, cc, 0] + dy, 0), hv - 1)
                x = min(max(h[r, cc, 1] + dx, 0), wv - 1)
                out[:, r, cc] += w33.reshape(-1)[j] * v[:, y, x]
    return out


def test_tap_order():
    assert TAP_OFFSETS.tolist()[0] == [-1, -1]
    assert TAP_OFFSETS.tolist()[4] == [0, 0]
    assert TAP_OFFSETS.tolist()[5] == [0, 1]


def test_delta_kernel_returns_matched_pixel(rng):
    v = rng.random((3, 6, 7))
    h = rng.integers(0, 6, (4, 5, 2))
    h[..., 1] = rng.integers(0, 7, (4, 5))
    out = standard_aggregate(v, h, delta_kernel())
    np.testing.assert_array_equal(out, v[:, h[..., 0], h[..., 1]])


def test_box_kernel_constant(rng):
    v = np.full((2, 5, 5), 0.4)
    np.testing.assert_allclose(standard_aggregate(v, ident(5, 5)), 0.4)


def test_standard_matches_naive(rng):
    v = rng.random((2, 5, 6))
    h = np.stack([rng.integers(0, 5, (3, 4)), rng.integers(0, 6, (3, 4))], -1)
    w = rng.standard_normal((3, 3))
    np.testing.assert_allclose(standard_aggregate(v, h, w), naive_standard(v, h, w), atol=1e-12)


def test_kernel_forms_agree(rng):
    v = rng.random((2, 4, 4))
    h = ident(4, 4)
    w = rng.standard_normal((3, 3))
    a = standard_aggregate(v, h, w)
    np.testing.assert_allclose(standard_aggregate(v, h, np.stack([w, w])), a)
    np.testing.assert_allclose(standard_aggregate(v, h, w.reshape(9)), a)
    full = np.zeros((2, 2, 3, 3))
    full[0, 0] = w
    full[1, 1] = w
    np.testing.assert_allclose(standard_aggregate(v, h, full), a, atol=1e-12)


def test_full_kernel_mixes_channels(rng):
    v = rng.random((2, 4, 4))
    w = np.zeros((1, 2, 3, 3))
    w[0, :, 1, 1] = 1.0
    out = standard_aggregate(v, ident(4, 4), w)
    np.testing.assert_allclose(out[0], v[0] + v[1])


def test_bad_kernel_shape(rng):
    with pytest.raises(ValueError):
        standard_aggregate(rng.random((2, 3, 3)), ident(3, 3), np.ones((4, 4)))


def test_linearity(rng):
    v1, v2 = rng.random((3, 5, 5)), rng.random((3, 5, 5))
    h = ident(5, 5)[::-1]
    w = rng.standard_normal((3, 3))
    lhs = standard_aggregate(2 * v1 - 0.5 * v2, h, w)
    rhs = 2 * standard_aggregate(v1, h, w) - 0.5 * standard_aggregate(v2, h, w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_bilinear_ramp():
    yy, xx = np.meshgrid(np.arange(6.0), np.arange(7.0), indexing="ij")
    v = (2 * yy - 3 * xx + 1)[None]
    ys = np.array([0.25, 2.5, 4.9])
    xs = np.array([5.5, 0.1, 3.3])
    np.testing.assert_allclose(bilinear_sample(v, ys, xs)[0], 2 * ys - 3 * xs + 1, atol=1e-12)


def test_bilinear_clamps():
    v = np.arange(4.0).reshape(1, 2, 2)
    np.testing.assert_array_equal(bilinear_sample(v, np.array([-3.0]), np.array([9.0]))[0], [1.0])


def test_dynamic_integer_offsets_shift_taps(rng):
    v = rng.random((2, 8, 8))
    h = np.full((3, 3, 2), 3)
    offsets = np.zeros((9, 2, 3, 3))
    offsets[:, 1] = 1.0
    shifted = standard_aggregate(v, h + [0, 1], delta_kernel())
    np.testing.assert_allclose(dynamic_aggregate(v, h, offsets, delta_kernel()), shifted)


def test_dynamic_rejects_bad_offsets(rng):
    v = rng.random((1, 4, 4))
    with pytest.raises(ValueError, match="offsets must be"):
        dynamic_aggregate(v, ident(4, 4), np.zeros((9, 2, 3, 4)))
    bad = np.zeros((9, 2, 4, 4))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        dynamic_aggregate(v, ident(4, 4), bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(1, 9), st.integers(1, 9))
def test_zero_offsets_bit_equal(seed, c, h, w):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((c, h + 2, w + 1))
    pos = np.stack([rng.integers(0, h + 2, (h, w)), rng.integers(0, w + 1, (h, w))], -1)
    wts = rng.standard_normal((c, 3, 3))
    a = standard_aggregate(v, pos, wts)
    b = dynamic_aggregate(v, pos, np.zeros((9, 2, h, w)), wts)
    assert np.array_equal(a, b)


def test_softmax_example():
    w = softmax_weights([np.array([10.0]), np.array([0.0]), np.array([0.0])])
    assert w[0, 0] == pytest.approx(np.exp(10) / (np.exp(10) + 2), rel=1e-12)
    assert w[0, 0] == pytest.approx(0.999909, abs=1e-6)


def test_softmax_stable_for_large_inputs():
    w = softmax_weights([np.array([1000.0]), np.array([999.0])])
    assert np.all(np.isfinite(w))
    assert w[0, 0] == pytest.approx(1 / (1 + np.exp(-1)))


def test_fuse_multiscale(rng):
    ys = [rng.random((2, 3, 3)) for _ in range(3)]
    ss = [rng.uniform(-1, 1, (3, 3)) for _ in range(3)]
    fused, weights = fuse_multiscale(ys, ss)
    wsum = sum(weights)
    np.testing.assert_allclose(wsum, 1.0, atol=1e-12)
    want = sum(y * w for y, w in zip(ys, weights))
    np.testing.assert_allclose(fused, want, atol=1e-12)
    same, _ = fuse_multiscale([ys[0]] * 3, ss)
    np.testing.assert_allclose(same, ys[0], atol=1e-12)


def test_fuse_output_conv_identity(rng):
    ys = [rng.random((2, 4, 4))]
    ss = [np.zeros((4, 4))]
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(fuse_multiscale(ys, ss, w)[0], ys[0])


def test_fuse_validation(rng):
    with pytest.raises(ValueError):
        fuse_multiscale([], [])
    with pytest.raises(ValueError):
        fuse_multiscale([rng.random((1, 2, 2))], [np.zeros((3, 3))])


def test_predict_offsets_sources(rng, tmp_path):
    f = rng.random((2, 4, 5))
    y = rng.random((3, 4, 5))
    np.testing.assert_array_equal(predict_offsets(f, y), 0.0)
    w = np.zeros((18, 5, 1, 1))
    w[3, 0, 0, 0] = 2.0  # tap 1, dx channel reads F channel 0
    io.write_weights(tmp_path / "o.wgt", w)
    off = predict_offsets(f, y, "file", io.read_weights(tmp_path / "o.wgt"))
    np.testing.assert_allclose(off[1, 1], 2 * f[0], atol=1e-6)
    assert np.count_nonzero(off) == np.count_nonzero(f[0])
    cb = predict_offsets(f, y, "callback", fn=lambda a, b: np.ones((9, 2, 4, 5)))
    np.testing.assert_array_equal(cb, 1.0)
    with pytest.raises(ValueError):
        predict_offsets(f, y, "file", np.zeros((18, 4, 1, 1)))
    with pytest.raises(ValueError):
        predict_offsets(f, y, "callback", fn=lambda a, b: np.ones(3))
    with pytest.raises(ValueError):
        predict_offsets(f, y, "learned")


def test_file_conv_edge_padding(rng):
    f = rng.random((1, 3, 3))
    y = np.zeros((1, 3, 3))
    w = np.zeros((18, 2, 3, 3))
    w[0, 0] = 1.0  # 3x3 box sum of F into tap 0 dy
    off = predict_offsets(f, y, "file", w)
    pad = np.pad(f[0], 1, mode="edge")
    assert off[0, 0, 0, 0] == pytest.approx(pad[:3, :3].sum())


def test_dynamic_aggregator(rng):
    v = rng.random((3, 6, 6))
    h = ident(6, 6)
    agg = DynamicAggregator(weights=delta_kernel()).fit(v)
    np.testing.assert_array_equal(agg.transform(h), v)
    assert agg.offsets_.shape == (9, 2, 6, 6)
    agg2 = clone(agg).set_params(offset_source="callback",
                                 offset_fn=lambda f, y: np.full((9, 2, 6, 6), 0.5))
    out = agg2.fit(v).transform(h, F=rng.random((1, 6, 6)))
    np.testing.assert_allclose(out, bilinear_sample(v, h[..., 0] + 0.5, h[..., 1] + 0.5))
    with pytest.raises(ValueError):
        agg2.transform(h)
    with pytest.raises(ValueError):
        DynamicAggregator(offset_source="nope").fit(v)


def test_fusion_selects_exact_scale_with_exhaustive_matching():
    from conftest import smooth_texture
    from nnfield.oracle import brute_force_nnf
    from nnfield.tensor import extract_descriptors, make_ref_pyramid

    refs = make_ref_pyramid(smooth_texture(np.random.default_rng(3), 48, 48), 0.8, 3)
    qs = [extract_descriptors(r) for r in refs]
    for i0 in range(3):
        ss = [brute_force_nnf(qs[i0], q).relevance for q in qs]
        _, weights = fuse_multiscale([np.zeros((1,) + ss[0].shape)] * 3, ss)
        assert np.mean(np.argmax(np.stack(weights), axis=0) == i0) >= 0.99
