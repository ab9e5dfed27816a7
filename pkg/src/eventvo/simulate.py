"""Event generation from intensity frame sequences.

Each pixel keeps a log-intensity reference level. Log intensity is
interpolated linearly in time between consecutive frames, and every crossing
of reference + c_pos (reference - c_neg) emits a positive (negative) event at
the interpolated crossing time, moving the reference by one threshold step.

Replaying the emitted events therefore reconstructs the final log intensity
of every pixel up to one threshold:

    |L_final - (L_initial + sum p * C)| <= max(c_pos, c_neg)

which holds exactly as long as the refractory hook stays disabled. Crossing
times are rounded to the nearest integer microsecond (the event timestamp
unit); rounding is monotone, so per-pixel ordering is preserved, and the
global stream is sorted by timestamp with ties broken by (y, x, p).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import empty_events, make_events

DEFAULT_THRESHOLD_RANGE = (0.16, 0.34)


@dataclass
class FrameSequence:
    """Intensity frames in [0, 1] with strictly increasing integer timestamps."""

    frames: np.ndarray  # (T, H, W)
    timestamps_us: np.ndarray  # (T,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got {self.frames.shape}")
        if self.timestamps_us.shape != (self.frames.shape[0],):
            raise ValueError("one timestamp per frame required")
        if len(self.timestamps_us) and np.any(np.diff(self.timestamps_us) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        if np.any(self.frames < 0.0) or np.any(self.frames > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")


@dataclass
class SimConfig:
    """Contrast thresholds and hooks for the event generator.

    c_pos / c_neg are the positive and negative contrast steps, log_eps the
    offset inside the log. threshold_jitter adds a per-pixel threshold offset
    drawn once per call (disabled at 0.0); refractory_us suppresses emitted
    events closer than the given spacing per pixel (disabled at 0), at the
    price of the reconstruction bound.
    """

    c_pos: float = 0.25
    c_neg: float = 0.25
    log_eps: float = 1e-3
    threshold_jitter: float = 0.0
    refractory_us: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.c_pos <= 0.0 or self.c_neg <= 0.0:
            raise ValueError("contrast thresholds must be positive")
        if self.log_eps <= 0.0:
            raise ValueError("log_eps must be positive")
        if self.threshold_jitter < 0.0:
            raise ValueError("threshold_jitter must be non-negative")
        if self.refractory_us < 0:
            raise ValueError("refractory_us must be non-negative")


def log_intensity(image, log_eps):
    if log_eps <= 0.0:
        raise ValueError("log_eps must be positive")
    return np.log(np.asarray(image, dtype=np.float64) + log_eps)


def randomize_thresholds(rng, threshold_range=DEFAULT_THRESHOLD_RANGE):
    """Two independent uniform draws for (c_pos, c_neg)."""
    lo, hi = threshold_range
    if not 0.0 < lo <= hi:
        raise ValueError("threshold_range must satisfy 0 < lo <= hi")
    return float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))


def _crossings(ref, l0, l1, c, t0, t1, sign):
    """Vectorized threshold crossings for one frame interval and one polarity."""
    delta = (l1 - ref) * sign
    n = np.floor(delta / c).astype(np.int64)
    n[delta <= 0.0] = 0
    idx = np.flatnonzero(n > 0)
    if len(idx) == 0:
        return None, n
    counts = n[idx]
    total = int(counts.sum())
    rep = np.repeat(idx, counts)
    # per-group crossing ranks 1..count
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(total) - np.repeat(starts, counts) + 1
    c_rep = c[rep] if np.ndim(c) else c
    levels = ref[rep] + sign * rank * c_rep
    span = l1[rep] - l0[rep]
    frac = (levels - l0[rep]) / span
    times = np.rint(t0 + (t1 - t0) * frac).astype(np.int64)
    return (rep, times, np.full(total, sign, dtype=np.int8)), n


def generate_events(seq: FrameSequence, cfg: SimConfig):
    """Emit the event stream for a frame sequence under the threshold model."""
    if seq.frames.shape[0] < 2:
        raise ValueError("event generation needs at least two frames")
    t_dim, h, w = seq.frames.shape
    rng = np.random.default_rng(cfg.seed)
    c_pos = np.full(h * w, cfg.c_pos)
    c_neg = np.full(h * w, cfg.c_neg)
    if cfg.threshold_jitter > 0.0:
        c_pos = np.maximum(c_pos + cfg.threshold_jitter * rng.standard_normal(h * w), 1e-6)
        c_neg = np.maximum(c_neg + cfg.threshold_jitter * rng.standard_normal(h * w), 1e-6)

    log_frames = log_intensity(seq.frames, cfg.log_eps).reshape(t_dim, h * w)
    ref = log_frames[0].copy()
    times_us = seq.timestamps_us.astype(np.float64)

    chunks = []
    for k in range(t_dim - 1):
        l0, l1 = log_frames[k], log_frames[k + 1]
        t0, t1 = times_us[k], times_us[k + 1]
        pos, n_pos = _crossings(ref, l0, l1, c_pos, t0, t1, +1)
        neg, n_neg = _crossings(ref, l0, l1, c_neg, t0, t1, -1)
        for block in (pos, neg):
            if block is not None:
                chunks.append(block)
        ref += n_pos * c_pos - n_neg * c_neg

    if not chunks:
        return empty_events()
    pix = np.concatenate([b[0] for b in chunks])
    t = np.concatenate([b[1] for b in chunks])
    p = np.concatenate([b[2] for b in chunks])
    x = (pix % w).astype(np.int64)
    y = (pix // w).astype(np.int64)

    order = np.lexsort((p, x, y, t))
    events = make_events(t[order], x[order], y[order], p[order])

    if cfg.refractory_us > 0:
        events = _apply_refractory(events, cfg.refractory_us, w)
    return events


def _apply_refractory(events, refractory_us, width):
    """Drop events closer than refractory_us to the previous kept one per pixel."""
    keep = np.ones(len(events), dtype=bool)
    last = {}
    pix = events["y"].astype(np.int64) * width + events["x"].astype(np.int64)
    for i, (pp, tt) in enumerate(zip(pix, events["t"])):
        prev = last.get(pp)
        if prev is not None and tt - prev < refractory_us:
            keep[i] = False
        else:
            last[pp] = tt
    return events[keep]
