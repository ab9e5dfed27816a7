"""Patch coordinate selection on score maps.

All strategies share the same outer contract: exactly `patches` coordinates
per call, `patches / grid_cells` from each cell of a near-equal partition of
the map, every pair separated by at least `min_center_distance` in Chebyshev
distance (so 3x3 patch supports cannot overlap at the default of 3).
Coordinates are (row, col) at score-map resolution. Scaling a score map by a
positive constant changes nothing: multinomial weights are renormalized and
ranking strategies only compare values.

Spacing is enforced by rejection resampling with a bounded retry budget; a
cell that cannot be filled raises SamplingError naming the cell. Cells whose
weights sum to zero fall back to uniform draws within the cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageops import avg_pool

POOL = 4

STRATEGIES = (
    "pooled_multinomial",
    "multinomial",
    "top_p",
    "three_p_random",
    "random",
)


class SamplingError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    patches: int
    grid_cells: int = 1
    strategy: str = "pooled_multinomial"
    min_center_distance: int = 3
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.patches < 1:
            raise ValueError("patches must be >= 1")
        if self.grid_cells < 1:
            raise ValueError("grid_cells must be >= 1")
        if self.patches % self.grid_cells:
            raise ValueError(
                f"grid_cells ({self.grid_cells}) must divide patches ({self.patches})"
            )
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.min_center_distance < 0:
            raise ValueError("min_center_distance must be non-negative")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


def partition_cells(height, width, cells):
    """Partition an height x width map into `cells` near-equal rectangles.

    The factor pair (rows, cols) of `cells` with the squarest cell shape wins
    (ties prefer fewer rows); row and column extents differ by at most one.
    Returns a row-major list of (y0, y1, x0, x1) half-open rectangles.
    """
    if height < 1 or width < 1:
        raise ValueError("map dimensions must be positive")
    if cells < 1:
        raise ValueError("cells must be >= 1")
    best = None
    for rows in range(1, cells + 1):
        if cells % rows:
            continue
        cols = cells // rows
        if rows > height or cols > width:
            continue
        badness = abs(rows * width - cols * height)
        if best is None or badness < best[0]:
            best = (badness, rows, cols)
    if best is None:
        raise ValueError(f"cannot tile a {height}x{width} map with {cells} cells")
    _, rows, cols = best

    def _splits(n, parts):
        base, rem = divmod(n, parts)
        sizes = [base + 1] * rem + [base] * (parts - rem)
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return edges

    ye = _splits(height, rows)
    xe = _splits(width, cols)
    return [
        (int(ye[r]), int(ye[r + 1]), int(xe[c]), int(xe[c + 1]))
        for r in range(rows)
        for c in range(cols)
    ]


def multinomial_without_replacement(weights, k, rng):
    """k sequential draws from the renormalized categorical distribution.

    Each drawn index is removed before the next draw. Fewer than k strictly
    positive weights leave the draw undefined and raise.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1).copy()
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if k < 0:
        raise ValueError("k must be non-negative")
    if int((w > 0.0).sum()) < k:
        raise ValueError(f"need at least {k} strictly positive weights")
    out = np.empty(k, dtype=np.int64)
    for i in range(k):
        total = w.sum()
        j = int(rng.choice(len(w), p=w / total))
        out[i] = j
        w[j] = 0.0
    return out


def _spacing_ok(accepted, y, x, d):
    if d <= 0 or not accepted:
        return True
    arr = np.asarray(accepted)
    cheb = np.maximum(np.abs(arr[:, 0] - y), np.abs(arr[:, 1] - x))
    return bool(np.all(cheb >= d))


def _validate_map(score_map):
    score_map = np.asarray(score_map, dtype=np.float64)
    if score_map.ndim != 2:
        raise ValueError(f"score map must be 2D, got shape {score_map.shape}")
    if not np.all(np.isfinite(score_map)) or np.any(score_map < 0.0):
        raise ValueError("score map values must be finite and non-negative")
    return score_map


def _cell_probs(weights, alive):
    """Probabilities over alive entries, ~ weights or uniform if all zero."""
    w = np.where(alive, weights, 0.0)
    total = w.sum()
    if total > 0.0:
        return w / total
    n_alive = int(alive.sum())
    if n_alive == 0:
        return None
    return alive.astype(np.float64) / n_alive


# Greedy packing inside a cell can dead-end (earlier picks exclude every
# remaining admissible pixel); a fresh pass in a new random order almost
# always packs, so each cell gets this many attempts from scratch.
CELL_RESTARTS = 25


def _pooled_multinomial(score_map, cfg, rng):
    h, w = score_map.shape
    if h % POOL or w % POOL:
        raise ValueError(f"pooled sampling needs dims divisible by {POOL}, got {(h, w)}")
    pooled = avg_pool(score_map, POOL)
    quota = cfg.patches // cfg.grid_cells
    accepted = []

    def fill_cell(y0, y1, x0, x1):
        """One packing attempt; returns the cell's coords or None on dead-end."""
        cw = x1 - x0
        weights = pooled[y0:y1, x0:x1].reshape(-1)
        alive = np.ones(weights.size, dtype=bool)
        if weights.size < quota:
            raise SamplingError(
                f"cell {ci}: {weights.size} pooled windows < quota {quota}"
            )
        got = []
        for _ in range(quota):
            for attempt in range(cfg.max_retries):
                probs = _cell_probs(weights, alive)
                if probs is None:
                    return None
                pick = int(rng.choice(weights.size, p=probs))
                py = y0 + pick // cw
                px = x0 + pick % cw
                window = score_map[
                    py * POOL : (py + 1) * POOL, px * POOL : (px + 1) * POOL
                ]
                wflat = window.reshape(-1)
                wsum = wflat.sum()
                # After repeated spacing rejections the score-proportional
                # inner draw may be unable to reach the admissible (often
                # zero-score) pixels; widen to uniform for the second half of
                # the retry budget. Window choice stays pooled-weighted.
                if wsum > 0.0 and attempt < cfg.max_retries // 2:
                    iprobs = wflat / wsum
                else:
                    iprobs = np.full(wflat.size, 1.0 / wflat.size)
                inner = int(rng.choice(wflat.size, p=iprobs))
                y = py * POOL + inner // POOL
                x = px * POOL + inner % POOL
                if _spacing_ok(accepted + got, y, x, cfg.min_center_distance):
                    got.append((y, x))
                    alive[pick] = False
                    break
            else:
                return None
        return got

    for ci, (y0, y1, x0, x1) in enumerate(partition_cells(*pooled.shape, cfg.grid_cells)):
        for _ in range(CELL_RESTARTS):
            got = fill_cell(y0, y1, x0, x1)
            if got is not None:
                accepted.extend(got)
                break
        else:
            raise SamplingError(f"pooled sampling exhausted retries in cell {ci}")
    return accepted


def _multinomial(score_map, cfg, rng):
    quota = cfg.patches // cfg.grid_cells
    accepted = []

    def fill_cell(y0, y1, x0, x1):
        cw = x1 - x0
        weights = score_map[y0:y1, x0:x1].reshape(-1)
        alive = np.ones(weights.size, dtype=bool)
        if weights.size < quota:
            raise SamplingError(f"cell {ci}: {weights.size} pixels < quota {quota}")
        got = []
        for _ in range(quota):
            for attempt in range(cfg.max_retries):
                if attempt < cfg.max_retries // 2:
                    probs = _cell_probs(weights, alive)
                else:
                    # widen to uniform over surviving pixels; see pooled note
                    probs = _cell_probs(np.ones_like(weights), alive)
                if probs is None:
                    return None
                pick = int(rng.choice(weights.size, p=probs))
                y = y0 + pick // cw
                x = x0 + pick % cw
                if _spacing_ok(accepted + got, y, x, cfg.min_center_distance):
                    got.append((y, x))
                    alive[pick] = False
                    break
            else:
                return None
        return got

    for ci, (y0, y1, x0, x1) in enumerate(partition_cells(*score_map.shape, cfg.grid_cells)):
        for _ in range(CELL_RESTARTS):
            got = fill_cell(y0, y1, x0, x1)
            if got is not None:
                accepted.extend(got)
                break
        else:
            raise SamplingError(f"multinomial sampling exhausted retries in cell {ci}")
    return accepted


def _top_p(score_map, cfg, rng):
    quota = cfg.patches // cfg.grid_cells
    accepted = []
    for ci, (y0, y1, x0, x1) in enumerate(partition_cells(*score_map.shape, cfg.grid_cells)):
        cw = x1 - x0
        flat = score_map[y0:y1, x0:x1].reshape(-1)
        # stable sort on the negated scores: ties keep row-major order
        order = np.argsort(-flat, kind="stable")
        taken = 0
        for pick in order:
            y = y0 + int(pick) // cw
            x = x0 + int(pick) % cw
            if _spacing_ok(accepted, y, x, cfg.min_center_distance):
                accepted.append((y, x))
                taken += 1
                if taken == quota:
                    break
        if taken < quota:
            raise SamplingError(f"top_p could not place quota {quota} in cell {ci}")
    return accepted


def _three_p_random(score_map, cfg, rng):
    quota = cfg.patches // cfg.grid_cells
    accepted = []
    for ci, (y0, y1, x0, x1) in enumerate(partition_cells(*score_map.shape, cfg.grid_cells)):
        cw = x1 - x0
        area = (y1 - y0) * cw
        need = 3 * quota
        if area < need:
            raise ValueError(f"cell {ci} has {area} pixels; 3 * quota = {need} required")
        candidates = rng.choice(area, size=need, replace=False)
        values = score_map[y0:y1, x0:x1].reshape(-1)[candidates]
        # stable sort keeps candidate draw order among equal scores
        order = np.argsort(-values, kind="stable")
        taken = 0
        for oi in order:
            pick = int(candidates[oi])
            y = y0 + pick // cw
            x = x0 + pick % cw
            if _spacing_ok(accepted, y, x, cfg.min_center_distance):
                accepted.append((y, x))
                taken += 1
                if taken == quota:
                    break
        if taken < quota:
            raise SamplingError(f"three_p_random could not place quota {quota} in cell {ci}")
    return accepted


def _random(score_map, cfg, rng):
    quota = cfg.patches // cfg.grid_cells
    d = cfg.min_center_distance
    accepted = []
    for ci, (y0, y1, x0, x1) in enumerate(partition_cells(*score_map.shape, cfg.grid_cells)):
        ch, cw = y1 - y0, x1 - x0
        base_valid = np.ones((ch, cw), dtype=bool)
        if d > 0:
            for ay, ax in accepted:
                yy0 = max(ay - d + 1 - y0, 0)
                yy1 = min(ay + d - y0, ch)
                xx0 = max(ax - d + 1 - x0, 0)
                xx1 = min(ax + d - x0, cw)
                if yy0 < yy1 and xx0 < xx1:
                    base_valid[yy0:yy1, xx0:xx1] = False
        placed = None
        for _ in range(cfg.max_retries):
            valid = base_valid.copy()
            trial = []
            for _ in range(quota):
                idxs = np.flatnonzero(valid.reshape(-1))
                if len(idxs) == 0:
                    break
                pick = int(rng.choice(idxs))
                y, x = pick // cw, pick % cw
                trial.append((y0 + y, x0 + x))
                if d > 0:
                    valid[max(y - d + 1, 0) : y + d, max(x - d + 1, 0) : x + d] = False
                else:
                    valid[y, x] = False
            if len(trial) == quota:
                placed = trial
                break
        if placed is None:
            raise SamplingError(f"random sampling exhausted retries in cell {ci}")
        accepted.extend(placed)
    return accepted


_DISPATCH = {
    "pooled_multinomial": _pooled_multinomial,
    "multinomial": _multinomial,
    "top_p": _top_p,
    "three_p_random": _three_p_random,
    "random": _random,
}


def sample_coordinates(score_map, cfg: SamplerConfig, rng=None):
    """Draw patch coordinates; returns an (patches, 2) int64 array of (row, col)."""
    score_map = _validate_map(score_map)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    coords = _DISPATCH[cfg.strategy](score_map, cfg, rng)
    return np.array(coords, dtype=np.int64).reshape(cfg.patches, 2)
