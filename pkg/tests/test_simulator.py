"""Event generator: threshold-crossing semantics and the reconstruction bound.

The key oracle is integration: replaying the emitted events on top of the
initial log intensity must land within one contrast threshold of the true
final log intensity, per pixel.
"""

import math

import numpy as np
import pytest

from eventvo.simulate import (
    FrameSequence,
    SimConfig,
    generate_events,
    log_intensity,
    randomize_thresholds,
)


def smooth_random_sequence(rng, n_frames=50, h=64, w=64, step=0.04):
    base = rng.uniform(0.25, 0.75, size=(h, w))
    drift = rng.uniform(-step, step, size=(n_frames, h, w)).cumsum(axis=0)
    frames = np.clip(base + drift, 0.0, 1.0)
    ts = np.arange(n_frames, dtype=np.int64) * 1000
    return FrameSequence(frames, ts)


def test_log_intensity_basics():
    assert log_intensity(np.array([1.0]), 1e-12)[0] == pytest.approx(0.0, abs=1e-9)
    assert log_intensity(np.array([0.0]), 1e-3)[0] == pytest.approx(math.log(1e-3))


def test_log_intensity_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(8, 8))
    out = log_intensity(img, 1e-3)
    for i in range(8):
        for j in range(8):
            assert out[i, j] == pytest.approx(math.log(img[i, j] + 1e-3), abs=1e-12)


def test_log_intensity_rejects_bad_eps():
    with pytest.raises(ValueError):
        log_intensity(np.zeros((2, 2)), 0.0)


def test_constant_sequence_emits_nothing():
    frames = np.full((5, 4, 4), 0.5)
    seq = FrameSequence(frames, np.arange(5) * 100)
    ev = generate_events(seq, SimConfig())
    assert len(ev) == 0


def test_ramp_event_count_and_times():
    """A log-intensity rise of 3.5 C over one interval fires exactly 3 events
    at the 1/3.5, 2/3.5, 3/3.5 fractions."""
    c = 0.2
    eps = 1e-3
    i0 = 0.3
    l0 = math.log(i0 + eps)
    i1 = math.exp(l0 + 3.5 * c) - eps
    assert i1 <= 1.0
    frames = np.full((2, 3, 3), i0)
    frames[1, 1, 2] = i1  # only pixel (y=1, x=2) ramps
    seq = FrameSequence(frames, np.array([0, 3_500_000]))
    ev = generate_events(seq, SimConfig(c_pos=c, c_neg=c, log_eps=eps))
    assert len(ev) == 3
    assert ev["t"].tolist() == [1_000_000, 2_000_000, 3_000_000]
    assert np.all(ev["p"] == 1)
    assert np.all(ev["x"] == 2) and np.all(ev["y"] == 1)


def test_falling_ramp_uses_negative_threshold():
    eps = 1e-3
    c_neg = 0.15
    i0 = 0.8
    l0 = math.log(i0 + eps)
    i1 = math.exp(l0 - 2.5 * c_neg) - eps
    frames = np.full((2, 2, 2), i0)
    frames[1, 0, 0] = i1
    seq = FrameSequence(frames, np.array([0, 1000]))
    ev = generate_events(seq, SimConfig(c_pos=0.9, c_neg=c_neg, log_eps=eps))
    assert len(ev) == 2  # floor(2.5)
    assert np.all(ev["p"] == -1)


def test_reconstruction_bound_on_smooth_sequence():
    rng = np.random.default_rng(1)
    seq = smooth_random_sequence(rng, n_frames=50, h=32, w=32)
    cfg = SimConfig(c_pos=0.12, c_neg=0.17)
    ev = generate_events(seq, cfg)
    assert len(ev) > 0

    logs = log_intensity(seq.frames, cfg.log_eps)
    recon = logs[0].copy()
    for e in ev:
        recon[e["y"], e["x"]] += cfg.c_pos if e["p"] > 0 else -cfg.c_neg
    err = np.abs(logs[-1] - recon)
    assert err.max() <= max(cfg.c_pos, cfg.c_neg) + 1e-12


def test_event_stream_sorted_and_in_bounds():
    rng = np.random.default_rng(2)
    seq = smooth_random_sequence(rng, n_frames=20, h=16, w=24)
    ev = generate_events(seq, SimConfig(c_pos=0.1, c_neg=0.1))
    assert np.all(np.diff(ev["t"]) >= 0)
    assert ev["x"].min() >= 0 and ev["x"].max() < 24
    assert ev["y"].min() >= 0 and ev["y"].max() < 16
    assert set(np.unique(ev["p"])) <= {-1, 1}


def test_simultaneous_events_tie_broken_by_row_then_column():
    # two pixels ramp identically -> identical crossing times; (y, x) breaks ties
    eps = 1e-3
    c = 0.3
    i0 = 0.2
    i1 = math.exp(math.log(i0 + eps) + 1.5 * c) - eps
    frames = np.full((2, 3, 3), i0)
    frames[1, 2, 0] = i1
    frames[1, 0, 1] = i1
    seq = FrameSequence(frames, np.array([0, 1000]))
    ev = generate_events(seq, SimConfig(c_pos=c, c_neg=c, log_eps=eps))
    assert len(ev) == 2
    assert ev["t"][0] == ev["t"][1]
    assert (ev["y"][0], ev["x"][0]) == (0, 1)
    assert (ev["y"][1], ev["x"][1]) == (2, 0)


def test_doubling_thresholds_never_increases_count():
    rng = np.random.default_rng(3)
    seq = smooth_random_sequence(rng, n_frames=30, h=16, w=16)
    for c in (0.05, 0.1, 0.2):
        n1 = len(generate_events(seq, SimConfig(c_pos=c, c_neg=c)))
        n2 = len(generate_events(seq, SimConfig(c_pos=2 * c, c_neg=2 * c)))
        assert n2 <= n1


def test_generation_deterministic():
    rng = np.random.default_rng(4)
    seq = smooth_random_sequence(rng, n_frames=15, h=12, w=12)
    cfg = SimConfig(c_pos=0.08, c_neg=0.11, seed=7)
    a = generate_events(seq, cfg)
    b = generate_events(seq, cfg)
    assert np.array_equal(a, b)


def test_fewer_than_two_frames_rejected():
    seq = FrameSequence(np.full((1, 4, 4), 0.5), np.array([0]))
    with pytest.raises(ValueError, match="two frames"):
        generate_events(seq, SimConfig())


def test_frame_sequence_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        FrameSequence(np.zeros((2, 4, 4)), np.array([5, 5]))
    with pytest.raises(ValueError, match="intensities"):
        FrameSequence(np.full((2, 4, 4), 1.5), np.array([0, 1]))
    with pytest.raises(ValueError, match="one timestamp"):
        FrameSequence(np.zeros((2, 4, 4)), np.array([0, 1, 2]))


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(c_pos=0.0)
    with pytest.raises(ValueError):
        SimConfig(log_eps=-1.0)
    with pytest.raises(ValueError):
        SimConfig(refractory_us=-5)


def test_refractory_drops_close_events():
    eps = 1e-3
    c = 0.1
    i0 = 0.2
    i1 = math.exp(math.log(i0 + eps) + 5.2 * c) - eps
    frames = np.full((2, 2, 2), i0)
    frames[1, 0, 0] = i1
    seq = FrameSequence(frames, np.array([0, 1000]))
    free = generate_events(seq, SimConfig(c_pos=c, c_neg=c, log_eps=eps))
    gated = generate_events(
        seq, SimConfig(c_pos=c, c_neg=c, log_eps=eps, refractory_us=400)
    )
    assert len(free) == 5
    assert len(gated) < len(free)
    # per-pixel spacing respects the refractory window
    assert np.all(np.diff(gated["t"]) >= 400)


def test_randomize_thresholds_point_mass():
    rng = np.random.default_rng(0)
    assert randomize_thresholds(rng, (0.2, 0.2)) == (0.2, 0.2)


def test_randomize_thresholds_deterministic_given_seed():
    a = randomize_thresholds(np.random.default_rng(11))
    b = randomize_thresholds(np.random.default_rng(11))
    assert a == b


def test_randomize_thresholds_independent_components():
    rng = np.random.default_rng(5)
    draws = np.array([randomize_thresholds(rng) for _ in range(10_000)])
    assert abs(np.corrcoef(draws.T)[0, 1]) < 0.05
    assert draws.min() >= 0.16 and draws.max() <= 0.34


def test_randomize_thresholds_bad_range():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        randomize_thresholds(rng, (0.3, 0.2))
    with pytest.raises(ValueError):
        randomize_thresholds(rng, (0.0, 0.2))
