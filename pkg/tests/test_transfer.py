import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import uniform_filter

from sptransfer.seeds import SEED, SuperpixelLabelMap
from sptransfer.transfer import (
    ChannelStats,
    guided_filter,
    smooth_transfer,
    transfer_all,
    transfer_region,
)


def box_oracle(plane, r):
    # explicit replicate-padded window sums
    p = np.pad(plane, r, mode="edge")
    h, w = plane.shape
    out = np.zeros_like(plane)
    for i in range(h):
        for j in range(w):
            out[i, j] = p[i : i + 2 * r + 1, j : j + 2 * r + 1].mean()
    return out


def test_identity_transfer(rng):
    lab = rng.normal(size=(6, 7, 3))
    mask = rng.uniform(size=(6, 7)) < 0.5
    stats = ChannelStats.of(lab[mask])
    out = transfer_region(lab.copy(), mask, stats, stats)
    assert np.allclose(out, lab, atol=1e-10)


def test_constant_region_goes_to_reference_mean():
    lab = np.full((4, 4, 3), 0.3)
    mask = np.ones((4, 4), bool)
    ref = ChannelStats(np.array([1.0, -2.0, 0.5]), np.array([0.2, 0.1, 0.3]))
    out = transfer_region(lab, mask, ChannelStats.of(lab), ref, sigma_floor=1e-6)
    assert np.allclose(out, ref.mean)


def test_pixels_outside_mask_untouched(rng):
    lab = rng.normal(size=(5, 5, 3))
    mask = np.zeros((5, 5), bool)
    mask[1:3, 1:4] = True
    before = lab.copy()
    ref = ChannelStats(np.ones(3), np.ones(3))
    transfer_region(lab, mask, ChannelStats.of(lab[mask]), ref)
    assert np.array_equal(lab[~mask], before[~mask])


def test_empty_region_rejected():
    with pytest.raises(ValueError):
        transfer_region(np.zeros((2, 2, 3)), np.zeros((2, 2), bool), ChannelStats.of(np.zeros(3)), ChannelStats.of(np.zeros(3)))


@given(st.integers(0, 2**32 - 1))
def test_transfer_hits_target_stats(seed):
    rng = np.random.default_rng(seed)
    lab = rng.normal(scale=rng.uniform(0.01, 10), size=(8, 8, 3))
    mask = rng.uniform(size=(8, 8)) < 0.6
    mask[0, 0] = mask[0, 1] = True
    lab[0, 0] += 1.0  # keep the region's std clear of the floor
    ref = ChannelStats(rng.normal(scale=20, size=3), rng.uniform(0.01, 5, size=3))
    out = transfer_region(lab.copy(), mask, ChannelStats.of(lab[mask]), ref)
    vals = out[mask]
    mean = vals.sum(0) / len(vals)
    std = np.sqrt(((vals - mean) ** 2).sum(0) / len(vals))
    assert np.allclose(mean, ref.mean, rtol=0, atol=1e-8)
    assert np.allclose(std, ref.std, rtol=1e-6, atol=0)


def test_guided_self_guidance(rng):
    src = rng.uniform(size=(12, 10))
    assert np.allclose(guided_filter(src, src, 3, 0.0), src, atol=1e-8)


def test_guided_constant_guide_is_box_mean(rng):
    src = rng.uniform(size=(9, 11))
    out = guided_filter(np.full_like(src, 0.7), src, 2, 1e-3)
    # a = 0 and b = box mean of src, and the output averages b once more
    assert np.allclose(out, box_oracle(box_oracle(src, 2), 2), atol=1e-8)


def test_guided_radius_zero(rng):
    src = rng.uniform(size=(5, 5))
    assert np.array_equal(guided_filter(rng.uniform(size=(5, 5)), src, 0, 1e-2), src)


@given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.sampled_from([0.0, 1e-8, 1e-4, 1.0]))
def test_guided_always_finite(seed, radius, eps):
    rng = np.random.default_rng(seed)
    guide = rng.uniform(size=(7, 9))
    if rng.uniform() < 0.3:
        guide[:] = 0.5
    out = guided_filter(guide, rng.uniform(size=(7, 9)), radius, eps)
    assert np.all(np.isfinite(out))


def test_box_mean_matches_scipy_reference(rng):
    plane = rng.uniform(size=(6, 8))
    assert np.allclose(uniform_filter(plane, 5, mode="nearest"), box_oracle(plane, 2), atol=1e-12)


def test_guided_rejects_bad_args(rng):
    with pytest.raises(ValueError):
        guided_filter(np.zeros((2, 2)), np.zeros((2, 3)), 1, 0.1)
    with pytest.raises(ValueError):
        guided_filter(np.zeros((2, 2)), np.zeros((2, 2)), 1, -1.0)


def one_region(shape):
    return SuperpixelLabelMap(np.zeros(shape, int), ((SEED, 0),))


def test_single_region_is_global_transfer(rng):
    lab_in = rng.normal(size=(6, 7, 3))
    lab_ref = rng.normal(loc=2, scale=3, size=(5, 4, 3))
    out = transfer_all(lab_in, lab_ref, one_region((6, 7)), one_region((5, 4)), [0])
    mi, si = lab_in.reshape(-1, 3).mean(0), lab_in.reshape(-1, 3).std(0)
    mr, sr = lab_ref.reshape(-1, 3).mean(0), lab_ref.reshape(-1, 3).std(0)
    assert np.allclose(out, (lab_in - mi) * sr / si + mr, atol=1e-12)


def test_swapped_regions_carry_partner_stats(rng):
    labels = np.zeros((6, 8), int)
    labels[:, 4:] = 1
    lm = SuperpixelLabelMap(labels, ((SEED, 0), (SEED, 1)))
    lab_in = rng.normal(size=(6, 8, 3))
    lab_ref = rng.normal(size=(6, 8, 3))
    lab_ref[:, :4] = lab_ref[:, :4] * 2 + 5
    out = transfer_all(lab_in, lab_ref, lm, lm, [1, 0])
    for region, partner in ((0, 1), (1, 0)):
        got = out[labels == region]
        want = lab_ref[labels == partner]
        assert np.allclose(got.mean(0), want.mean(0), atol=1e-8)
        assert np.allclose(got.std(0), want.std(0), rtol=1e-6)


def test_transfer_is_order_free(rng):
    labels = rng.integers(0, 4, (7, 7))
    labels[0, :4] = np.arange(4)
    lm = SuperpixelLabelMap(labels, tuple((SEED, k) for k in range(4)))
    lab_in, lab_ref = rng.normal(size=(7, 7, 3)), rng.normal(size=(7, 7, 3))
    mapping = [2, 0, 3, 1]
    out = transfer_all(lab_in, lab_ref, lm, lm, mapping)
    # region-by-region in reverse order
    manual = lab_in.copy()
    for k in (3, 2, 1, 0):
        mask = labels == k
        transfer_region(manual, mask, ChannelStats.of(lab_in[mask]), ChannelStats.of(lab_ref[labels == mapping[k]]))
    assert np.allclose(out, manual, atol=1e-12)


def test_smoothing_a_zero_change_is_identity(rng):
    lab = rng.normal(size=(9, 9, 3))
    out = smooth_transfer(lab, lab.copy(), rng.uniform(size=(9, 9)), 3, 1e-4)
    assert np.allclose(out, lab, atol=1e-12)
