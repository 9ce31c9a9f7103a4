import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sptransfer.correspondence import INPUT, REFERENCE, MatchedPointSet
from sptransfer.features import (
    ALL_TOGGLES,
    FeatureWeights,
    appearance_stack,
    build_feature_bank,
    gradient_patch,
    llc_feature,
    patch_intensity,
    relative_location,
    ridge_coefficients,
    sparse_sqdist,
    split_style_free,
    style_free_exponent,
    term_scales,
    texture_feature,
)
from sptransfer.imagecore import intensity_plane


def ridge_oracle(basis, target, ridge):
    # least squares on the system stacked with sqrt(ridge) * Id
    k = basis.shape[1]
    a = np.vstack([basis, math.sqrt(ridge) * np.eye(k)])
    b = np.concatenate([target, np.zeros(k)])
    return np.linalg.lstsq(a, b, rcond=None)[0]


def five_matches(dims):
    h, w = dims
    locs = np.array([[1, 1], [1, w - 2], [h - 2, 1], [h - 2, w - 2], [h // 2, w // 2]])
    return MatchedPointSet(locs, locs, np.linspace(1, 0.5, 5), dims, dims)


def gray(value, shape):
    return np.full(shape + (3,), value)


def test_patch_intensity_constant():
    assert np.allclose(patch_intensity(gray(0.5, (6, 6)), (3, 3), 3), 0.5 * math.sqrt(3))


def test_patch_intensity_corner_replicates(rng):
    img = rng.uniform(0, 1, (5, 6, 3))
    inten = np.sqrt(np.sum(img**2, axis=2))
    padded = np.pad(inten, 2, mode="edge")
    # (0, 0) sits at (2, 2) of the padded plane
    assert np.array_equal(patch_intensity(img, (0, 0), 5), padded[0:5, 0:5].ravel())


def test_patch_side_one(rng):
    img = rng.uniform(0, 1, (4, 4, 3))
    assert np.allclose(patch_intensity(img, (2, 1), 1), [np.linalg.norm(img[2, 1])])


def test_patch_side_must_be_odd():
    with pytest.raises(ValueError):
        patch_intensity(gray(0.5, (4, 4)), (0, 0), 4)


def test_gradient_patch_constant_is_zero():
    assert np.all(gradient_patch(gray(0.3, (7, 7)), (3, 3), 5) == 0)


def test_gradient_patch_step_edge():
    # intensity steps by h between columns 3 and 4
    img = gray(0.2, (7, 8))
    img[:, 4:] = 0.6
    h = (0.6 - 0.2) * math.sqrt(3)
    patch = gradient_patch(img, (3, 4), 3).reshape(3, 3)
    assert np.allclose(patch[:, 0], h / 2) and np.allclose(patch[:, 1], h / 2)
    assert np.allclose(patch[:, 2], 0)


@given(st.integers(0, 2**32 - 1))
def test_gradient_patch_nonnegative(seed):
    img = np.random.default_rng(seed).uniform(0, 1, (6, 6, 3))
    assert np.all(gradient_patch(img, (0, 5), 5) >= 0)


def test_texture_constant_is_zero():
    assert np.all(texture_feature(gray(0.4, (9, 9)), (4, 4), 5) == 0)


def test_texture_horizontal_ramp():
    ramp = np.linspace(0.1, 0.9, 12)
    img = np.repeat(ramp[None, :, None], 10, axis=0).repeat(3, axis=2)
    t = texture_feature(img, (5, 6), 5)
    hist = t[2:]
    assert t[0] > 0 and t[1] > 0
    # gradient points along +x, so all mass sits in the bin holding direction 0
    assert hist[0] == pytest.approx(1.0) and np.allclose(hist[1:], 0)
    reverse = texture_feature(img[:, ::-1], (5, 6), 5)[2:]
    assert reverse[4] == pytest.approx(1.0)


def test_texture_requires_patch_side_three():
    with pytest.raises(ValueError):
        texture_feature(gray(0.4, (5, 5)), (2, 2), 1)


@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 5, 7]))
def test_texture_histogram_norm(seed, side):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (8, 8, 3))
    if rng.uniform() < 0.3:
        img[:] = img[0, 0]
    norm = np.linalg.norm(texture_feature(img, (int(rng.integers(8)), int(rng.integers(8))), side)[2:])
    assert norm == pytest.approx(1.0) or norm == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 1.0, 1e3, 1e6]))
def test_ridge_residual(seed, ridge):
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(12, 5))
    y = rng.normal(size=12)
    x = ridge_coefficients(basis, y, ridge)
    rhs = basis.T @ y
    assert np.linalg.norm((basis.T @ basis + ridge * np.eye(5)) @ x - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_relative_location_small_ridge_reconstructs():
    m = five_matches((20, 20))
    loc = (7, 12)
    code = relative_location(loc, m, INPUT, 1e-7)
    tau = m.input_locs[code.ids].T.astype(float)
    assert np.allclose(tau @ code.values, loc, atol=1e-6)
    # as the ridge vanishes the solution tends to the minimum-norm one
    assert np.allclose(code.values, np.linalg.pinv(tau) @ np.array(loc, float), atol=1e-5)


def test_relative_location_at_matched_point():
    m = five_matches((20, 20))
    code = relative_location((1, 1), m, INPUT, 1000.0)
    assert code.ids[0] == 0
    tau = m.input_locs[code.ids].T.astype(float)
    assert np.allclose(code.values, ridge_oracle(tau, np.array([1.0, 1.0]), 1000.0), rtol=1e-12, atol=1e-15)


def test_relative_location_pattern_is_shared():
    m = five_matches((20, 20))
    a = relative_location((2, 2), m, INPUT, 1000.0)
    b = relative_location((2, 3), m, INPUT, 1000.0)
    assert a.ids.tolist() == b.ids.tolist()
    assert not np.array_equal(a.values, b.values)


def test_llc_exact_column_dominates(rng):
    img = rng.uniform(0.05, 1, (16, 16, 3))
    m = five_matches((16, 16))
    # querying at a matched point makes y equal to that basis column
    code = llc_feature((8, 8), img, m, INPUT, 1e-10, 3)
    l1 = np.sum(np.abs(code.values))
    assert code.ids[0] == 4 and code.values[0] / l1 > 0.9


def test_llc_default_ridge_matches_oracle(rng):
    img = rng.uniform(0.05, 1, (16, 16, 3))
    m = five_matches((16, 16))
    code = llc_feature((5, 9), img, m, INPUT, 1e6, 5)
    basis = np.stack([appearance_stack(img, tuple(m.input_locs[i]), 5) for i in code.ids], axis=1)
    y = appearance_stack(img, (5, 9), 5)
    assert np.allclose(code.values, ridge_oracle(basis, y, 1e6), rtol=0, atol=1e-10)


def test_llc_zero_target_is_zero():
    img = gray(0.5, (12, 12))
    img[3:10, 3:10] = 0.0
    m = five_matches((12, 12))
    code = llc_feature((6, 6), img, m, INPUT, 1e6, 3)
    assert np.all(code.values == 0)


def test_constant_bank():
    m = five_matches((8, 8))
    bank = build_feature_bank(gray(0.5, (8, 8)), m, INPUT)
    assert np.all(bank.T == 0)
    assert bank.La.min() >= 0 and bank.La.max() <= 1


def test_bank_matches_single_pixel_oracles(rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    m = MatchedPointSet(
        [[2, 3], [12, 4], [7, 7], [3, 13], [13, 12], [8, 1]],
        [[1, 1], [14, 2], [6, 9], [2, 12], [12, 14], [9, 3]],
        np.ones(6),
        (16, 16),
        (16, 16),
    )
    w = FeatureWeights()
    bank = build_feature_bank(img, m, REFERENCE, w, patch_side=5)
    for loc in [(0, 0), (7, 10), (15, 4)]:
        i, j = loc
        assert np.allclose(bank.M[i, j], patch_intensity(img, loc, 5), atol=1e-14)
        assert np.allclose(bank.DV[i, j], gradient_patch(img, loc, 5), atol=1e-14)
        assert np.allclose(bank.T[i, j], texture_feature(img, loc, 5), atol=1e-12)
        assert np.allclose(bank.La[i, j], [i / 16, j / 16])
        assert np.allclose(bank.I[i, j], intensity_plane(img)[i, j])
        lr = relative_location(loc, m, REFERENCE, w.n_alpha)
        assert bank.neighbors[i, j].tolist() == lr.ids.tolist()
        assert np.allclose(bank.Lr[i, j], lr.values, rtol=1e-9, atol=1e-15)
        s = llc_feature(loc, img, m, REFERENCE, w.n_beta, 5)
        assert np.allclose(bank.S[i, j], s.values, rtol=1e-9, atol=1e-15)


def test_bank_shape_contract(rng):
    m = five_matches((10, 12))
    bank = build_feature_bank(rng.uniform(0, 1, (10, 12, 3)), m, INPUT)
    dims = {bank.style_free(i, j).shape for i in range(10) for j in range(12)}
    assert dims == {(bank.f_dim,)}
    assert bank.Lr.shape == bank.S.shape == (10, 12, 5)
    for arr in (bank.M, bank.C, bank.I, bank.DV, bank.T, bank.La, bank.Lr, bank.S):
        assert np.all(np.isfinite(arr))


def test_style_free_holds_only_style_free_terms(rng):
    m = five_matches((10, 10))
    bank = build_feature_bank(rng.uniform(0, 1, (10, 10, 3)), m, INPUT)
    s, t, la, lr = split_style_free(bank.style_free(4, 6), 5)
    assert np.array_equal(t, bank.T[4, 6]) and np.array_equal(la, bank.La[4, 6])
    assert np.array_equal(s[bank.neighbors[4, 6]], bank.S[4, 6])
    assert np.array_equal(lr[bank.neighbors[4, 6]], bank.Lr[4, 6])


def test_bank_is_deterministic(rng):
    img = rng.uniform(0, 1, (12, 12, 3))
    m = five_matches((12, 12))
    a, b = build_feature_bank(img, m, INPUT), build_feature_bank(img, m, INPUT)
    for name in ("M", "DV", "T", "La", "Lr", "S", "neighbors"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_bank_rejects_mismatched_dims(rng):
    with pytest.raises(ValueError):
        build_feature_bank(rng.uniform(0, 1, (9, 9, 3)), five_matches((10, 10)), INPUT)


def test_weights_must_be_positive():
    with pytest.raises(ValueError):
        FeatureWeights(lambda_T=0.0)


def test_term_scales_toggles():
    w = FeatureWeights()
    full = term_scales(w)
    assert full["T"] == pytest.approx(1000.0) and full["S"] == pytest.approx(10.0)
    off = term_scales(w, ALL_TOGGLES - {"color", "distance"})
    assert off["C"] == off["S"] == off["La"] == off["Lr"] == 0.0 and off["M"] > 0
    with pytest.raises(ValueError):
        term_scales(w, {"colour"})


@given(st.integers(0, 2**32 - 1))
def test_sparse_sqdist_matches_dense(seed):
    rng = np.random.default_rng(seed)
    n = 9
    ids_a = np.stack([rng.choice(n, 5, replace=False) for _ in range(4)])
    ids_b = np.stack([rng.choice(n, 5, replace=False) for _ in range(4)])
    va, vb = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    dense = []
    for r in range(4):
        a, b = np.zeros(n), np.zeros(n)
        a[ids_a[r]] = va[r]
        b[ids_b[r]] = vb[r]
        dense.append(np.sum((a - b) ** 2))
    assert np.allclose(sparse_sqdist(ids_a, va, ids_b, vb), dense, atol=1e-12)


def test_style_free_exponent_matches_dense(rng):
    m = MatchedPointSet(
        [[1, 1], [1, 8], [8, 1], [8, 8], [4, 5], [6, 2]],
        [[2, 1], [1, 7], [7, 2], [8, 7], [5, 5], [6, 3]],
        np.ones(6),
        (10, 10),
        (10, 10),
    )
    a = build_feature_bank(rng.uniform(0, 1, (10, 10, 3)), m, INPUT)
    b = build_feature_bank(rng.uniform(0, 1, (10, 10, 3)), m, REFERENCE)
    scales = term_scales(FeatureWeights())
    fa, fb = np.array([0, 17, 55, 99]), np.array([3, 17, 40, 0])
    got = style_free_exponent(a, fa, b, fb, scales)
    for k, (p, q) in enumerate(zip(fa, fb)):
        da = split_style_free(a.style_free(*divmod(p, 10)), 6)
        db = split_style_free(b.style_free(*divmod(q, 10)), 6)
        want = sum(scales[t] * np.sum((x - y) ** 2) for t, x, y in zip(("S", "T", "La", "Lr"), da, db))
        assert got[k] == pytest.approx(want, rel=1e-9, abs=1e-12)
