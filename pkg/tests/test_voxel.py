"""Voxel grid construction, normalization and augmentation.

The conservation and normalization checks are written against independent
recomputations (brute-force per-pixel accumulation, direct statistics) rather
than the library's own arithmetic.
"""

import numpy as np
import pytest

from eventvo.events import make_events, empty_events
from eventvo.geometry import CameraIntrinsics
from eventvo.voxel import (
    NUM_BINS,
    AugmentParams,
    VoxelGrid,
    build_voxel_grid,
    normalize,
    photometric_augment,
)

INTR = CameraIntrinsics(fx=50.0, fy=50.0, cx=16.0, cy=12.0, width=32, height=24)


def random_events(rng, n, t0, t1, w=32, h=24):
    t = np.sort(rng.integers(t0, t1, n))
    return make_events(t, rng.integers(0, w, n), rng.integers(0, h, n),
                       rng.choice([-1, 1], n))


def test_single_event_on_exact_bin():
    # window [0, 1000), tau = t/1000 * 4; t = 500 -> tau = 2.0 exactly
    ev = make_events([500], [3], [4], [1])
    g = build_voxel_grid(ev, (0, 1000), INTR)
    assert g.data[4, 3, 2] == 1.0
    assert g.data.sum() == 1.0
    assert not g.normalized


def test_single_event_split_between_bins():
    # tau = 1.25 -> 0.75 in bin 1, 0.25 in bin 2
    ev = make_events([312500], [5], [6], [1])
    g = build_voxel_grid(ev, (0, 1_000_000), INTR)
    np.testing.assert_allclose(g.data[6, 5, 1], 0.75, atol=1e-12)
    np.testing.assert_allclose(g.data[6, 5, 2], 0.25, atol=1e-12)
    assert np.count_nonzero(g.data) == 2


def test_conservation_against_bruteforce_oracle():
    """Per-pixel bin sums must equal the signed polarity counts."""
    rng = np.random.default_rng(11)
    ev = random_events(rng, 1000, 0, 5000)
    g = build_voxel_grid(ev, (0, 5000), INTR)

    oracle = np.zeros((24, 32))
    for e in ev:
        oracle[e["y"], e["x"]] += e["p"]
    np.testing.assert_allclose(g.data.sum(axis=2), oracle, atol=1e-9)


def test_voxelization_is_additive():
    rng = np.random.default_rng(4)
    a = random_events(rng, 300, 0, 2000)
    b = random_events(rng, 200, 2000, 4000)
    both = np.sort(np.concatenate([a, b]), order="t")
    window = (0, 4000)
    g_both = build_voxel_grid(both, window, INTR)
    g_a = build_voxel_grid(a, window, INTR)
    g_b = build_voxel_grid(b, window, INTR)
    np.testing.assert_allclose(g_both.data, g_a.data + g_b.data, atol=1e-12)


def test_window_is_half_open():
    ev = make_events([0], [0], [0], [1])
    g = build_voxel_grid(ev, (0, 100), INTR)  # t_start included
    assert g.data.sum() == 1.0
    ev_end = make_events([100], [0], [0], [1])
    with pytest.raises(ValueError, match="window"):
        build_voxel_grid(ev_end, (0, 100), INTR)  # t_end excluded


def test_event_outside_bounds_rejected():
    ev = make_events([10], [32], [0], [1])
    with pytest.raises(ValueError, match="bounds"):
        build_voxel_grid(ev, (0, 100), INTR)


def test_zero_duration_window_rejected():
    with pytest.raises(ValueError):
        build_voxel_grid(empty_events(), (100, 100), INTR)


def test_empty_stream_gives_zero_grid():
    g = build_voxel_grid(empty_events(), (0, 100), INTR)
    assert g.data.shape == (24, 32, NUM_BINS)
    assert np.all(g.data == 0.0)


def test_normalize_two_point():
    data = np.zeros((24, 32, NUM_BINS))
    data[0, 0, 0] = 1.0
    data[5, 5, 3] = 3.0
    g = normalize(VoxelGrid(data, 0, 100))
    assert g.normalized
    np.testing.assert_allclose(g.data[0, 0, 0], -1.0, atol=1e-12)
    np.testing.assert_allclose(g.data[5, 5, 3], 1.0, atol=1e-12)
    assert np.count_nonzero(g.data) == 2


def test_normalize_all_zero_grid():
    g = normalize(VoxelGrid(np.zeros((4, 4, NUM_BINS)), 0, 10))
    assert g.normalized
    assert np.all(g.data == 0.0)


def test_normalize_constant_entries_degenerate_sigma():
    data = np.zeros((4, 4, NUM_BINS))
    data[0, 0, 0] = 2.0
    data[1, 1, 1] = 2.0
    g = normalize(VoxelGrid(data, 0, 10))
    assert np.all(g.data == 0.0)
    assert g.normalized


def test_normalize_statistics_recomputed_independently():
    rng = np.random.default_rng(7)
    for trial in range(20):
        data = np.zeros((24, 32, NUM_BINS))
        idx = rng.choice(data.size, size=200, replace=False)
        data.reshape(-1)[idx] = rng.standard_normal(200) * 3 + 1
        zeros_before = data == 0.0
        g = normalize(VoxelGrid(data, 0, 10))
        nz = g.data[g.data != 0.0]
        assert abs(nz.mean()) < 1e-5
        assert abs(nz.std() - 1.0) < 1e-5
        assert np.all(g.data[zeros_before] == 0.0)


def test_normalize_idempotent_in_effect():
    rng = np.random.default_rng(8)
    data = np.zeros((24, 32, NUM_BINS))
    idx = rng.choice(data.size, size=150, replace=False)
    data.reshape(-1)[idx] = rng.standard_normal(150)
    once = normalize(VoxelGrid(data, 0, 10))
    again = normalize(VoxelGrid(once.data.copy(), 0, 10))
    assert np.max(np.abs(again.data - once.data)) < 1e-5


def test_augment_neutral_parameters_identity():
    rng = np.random.default_rng(2)
    data = rng.standard_normal((24, 32, NUM_BINS))
    g = VoxelGrid(data.copy(), 0, 10)
    out = photometric_augment(g, AugmentParams())
    np.testing.assert_array_equal(out.data, data)


def test_augment_total_dropout():
    rng = np.random.default_rng(2)
    g = VoxelGrid(rng.standard_normal((8, 8, NUM_BINS)), 0, 10)
    out = photometric_augment(g, AugmentParams(drop_fraction_range=(1.0, 1.0)))
    assert np.all(out.data == 0.0)


def test_augment_dropout_keeps_largest_magnitudes():
    """drop 0.5 of 10 nonzeros -> the 5 of largest |value| survive."""
    data = np.zeros((4, 4, NUM_BINS))
    vals = np.array([0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8, 0.9, -1.0])
    pos = [(0, 0, 0), (0, 1, 1), (1, 0, 2), (1, 1, 3), (2, 2, 4),
           (2, 3, 0), (3, 0, 1), (3, 1, 2), (3, 2, 3), (3, 3, 4)]
    for (y, x, b), v in zip(pos, vals):
        data[y, x, b] = v
    out = photometric_augment(
        VoxelGrid(data, 0, 10), AugmentParams(drop_fraction_range=(0.5, 0.5))
    )
    survivors = out.data[out.data != 0.0]
    assert len(survivors) == 5
    # sort-based oracle: survivors are exactly the five largest magnitudes
    expect = vals[np.argsort(np.abs(vals))[5:]]
    assert sorted(np.abs(survivors)) == pytest.approx(sorted(np.abs(expect)))


def test_augment_gain_scales_everything():
    data = np.zeros((4, 4, NUM_BINS))
    data[0, 0, 0] = 2.0
    data[1, 2, 3] = -1.0
    out = photometric_augment(
        VoxelGrid(data, 0, 10), AugmentParams(gain_range=(3.0, 3.0))
    )
    np.testing.assert_allclose(out.data, data * 3.0)


def test_augment_hot_pixels_change_entries():
    g = VoxelGrid(np.zeros((16, 16, NUM_BINS)), 0, 10)
    out = photometric_augment(g, AugmentParams(hot_pixel_rate=20.0, seed=5))
    assert np.count_nonzero(out.data) > 0
    assert np.all(np.isin(out.data[out.data != 0], [-1.0, 1.0]))


def test_augment_seed_reproducible():
    rng = np.random.default_rng(9)
    data = rng.standard_normal((16, 16, NUM_BINS))
    params = AugmentParams(gain_range=(0.5, 2.0), drop_fraction_range=(0.2, 0.8),
                           hot_pixel_rate=3.0, seed=42)
    a = photometric_augment(VoxelGrid(data.copy(), 0, 10), params)
    b = photometric_augment(VoxelGrid(data.copy(), 0, 10), params)
    np.testing.assert_array_equal(a.data, b.data)


def test_augment_rejects_normalized_grid():
    g = normalize(VoxelGrid(np.zeros((4, 4, NUM_BINS)), 0, 10))
    with pytest.raises(ValueError, match="unnormalized"):
        photometric_augment(g, AugmentParams())


def test_augment_params_validation():
    with pytest.raises(ValueError):
        AugmentParams(gain_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentParams(drop_fraction_range=(0.5, 1.5))
    with pytest.raises(ValueError):
        AugmentParams(hot_pixel_rate=-1.0)


def test_grid_shape_validation():
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((4, 4, 3)), 0, 10)
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((4, 4, NUM_BINS)), 10, 10)
