"""Voxel grids: bilinear-in-time event accumulation, normalization, augmentation.

A voxel grid spans a half-open time window [t_start, t_end) and distributes
each event's polarity over the two temporal bins adjacent to its normalized
timestamp. The unnormalized grid therefore conserves the signed polarity sum
of the deposited events exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EVENT_DTYPE

NUM_BINS = 5


@dataclass
class VoxelGrid:
    data: np.ndarray  # (H, W, NUM_BINS) float64
    t_start: int
    t_end: int
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != NUM_BINS:
            raise ValueError(f"voxel grid must be (H, W, {NUM_BINS}), got {self.data.shape}")
        if not self.t_end > self.t_start:
            raise ValueError("voxel window must satisfy t_end > t_start")

    @property
    def shape(self):
        return self.data.shape

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.data.copy(), self.t_start, self.t_end, self.normalized)


def build_voxel_grid(events, window, intrinsics) -> VoxelGrid:
    """Accumulate events into an (H, W, NUM_BINS) grid over [t_start, t_end).

    The normalized timestamp tau = (t - t_start) / (t_end - t_start) * (B - 1)
    splits each polarity between bins floor(tau) and ceil(tau) with weights
    (1 - frac) and frac. Events outside the window or the sensor raise.
    """
    t_start, t_end = int(window[0]), int(window[1])
    if not t_end > t_start:
        raise ValueError("window must satisfy t_end > t_start")
    h, w = intrinsics.height, intrinsics.width
    grid = np.zeros((h, w, NUM_BINS), dtype=np.float64)
    if events.dtype != EVENT_DTYPE:
        raise ValueError(f"expected event dtype {EVENT_DTYPE}, got {events.dtype}")
    if len(events) == 0:
        return VoxelGrid(grid, t_start, t_end)

    t = events["t"].astype(np.float64)
    x = events["x"].astype(np.int64)
    y = events["y"].astype(np.int64)
    p = events["p"].astype(np.float64)
    if np.any(events["t"] < t_start) or np.any(events["t"] >= t_end):
        raise ValueError(f"event outside window [{t_start}, {t_end})")
    if np.any(x < 0) or np.any(x >= w) or np.any(y < 0) or np.any(y >= h):
        raise ValueError("event outside pixel bounds")
    if not np.all(np.abs(events["p"]) == 1):
        raise ValueError("event polarity must be -1 or +1")

    tau = (t - t_start) / (t_end - t_start) * (NUM_BINS - 1)
    lo = np.floor(tau).astype(np.int64)
    frac = tau - lo
    np.add.at(grid, (y, x, lo), p * (1.0 - frac))
    hi_mask = frac > 0.0
    np.add.at(
        grid,
        (y[hi_mask], x[hi_mask], lo[hi_mask] + 1),
        p[hi_mask] * frac[hi_mask],
    )
    return VoxelGrid(grid, t_start, t_end)


def normalize(grid: VoxelGrid) -> VoxelGrid:
    """Standardize the nonzero entries to zero mean / unit std; zeros stay zero.

    Degenerate grids (no nonzero entries, or nonzero std below 1e-12) come back
    all-zero but still flagged normalized.
    """
    data = grid.data.copy()
    mask = data != 0.0
    num_nonzero = int(mask.sum())
    out = VoxelGrid(data, grid.t_start, grid.t_end, normalized=True)
    if num_nonzero == 0:
        return out
    total = data[mask].sum()
    mean = total / num_nonzero
    var = (data[mask] ** 2).sum() / num_nonzero - mean * mean
    std = np.sqrt(max(var, 0.0))
    if std < 1e-12:
        data[mask] = 0.0
        return out
    data[mask] = (data[mask] - mean) / std
    return out


@dataclass
class AugmentParams:
    """Photometric augmentation: gain, magnitude-ordered dropout, hot pixels.

    Draw order is fixed (gain, drop fraction, hot pixels) so a seed pins the
    result bit-for-bit.
    """

    gain_range: tuple = (1.0, 1.0)
    drop_fraction_range: tuple = (0.0, 0.0)
    hot_pixel_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gain_range[0] <= self.gain_range[1]):
            raise ValueError("gain_range must satisfy 0 < lo <= hi")
        lo, hi = self.drop_fraction_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("drop_fraction_range must satisfy 0 <= lo <= hi <= 1")
        if self.hot_pixel_rate < 0.0:
            raise ValueError("hot_pixel_rate must be non-negative")


def photometric_augment(grid: VoxelGrid, params: AugmentParams, rng=None) -> VoxelGrid:
    """Apply gain -> dropout -> hot pixels to an unnormalized grid."""
    if grid.normalized:
        raise ValueError("photometric_augment expects an unnormalized grid")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    data = grid.data.copy()

    gain = rng.uniform(params.gain_range[0], params.gain_range[1])
    data *= gain

    frac = rng.uniform(params.drop_fraction_range[0], params.drop_fraction_range[1])
    flat = data.reshape(-1)
    nonzero = np.flatnonzero(flat)
    n_drop = int(round(frac * len(nonzero)))
    if n_drop > 0:
        # stable sort on |value| keeps ties in flat (row-major) order
        order = np.argsort(np.abs(flat[nonzero]), kind="stable")
        flat[nonzero[order[:n_drop]]] = 0.0

    n_hot = rng.poisson(params.hot_pixel_rate)
    h, w, b = data.shape
    for _ in range(n_hot):
        y = rng.integers(h)
        x = rng.integers(w)
        k = rng.integers(b)
        data[y, x, k] += rng.choice((-1.0, 1.0))

    return VoxelGrid(data, grid.t_start, grid.t_end, normalized=False)
