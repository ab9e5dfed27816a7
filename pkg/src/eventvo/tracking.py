"""Patch graph tracking on voxel grids.

A patch is a 3x3 support anchored at input resolution (score-map coordinate
times 4, plus 2 to the centre of the 4x4 block) with one inverse depth.
Support samples sit 4 px apart, the score-map pixel pitch. Edges connect a
patch to nearby grids in the window and carry the current flow target (the
estimated patch centre position in the target grid) plus a confidence.

Flow refinement is inverse-compositional, translation-only alignment of the
5-channel patch between its source grid and a target grid: the template
gradients and the 2x2 Gauss-Newton system are fixed, each inner iteration
samples the target grid bilinearly and subtracts the solved step from the
target position. A backtracking guard halves rejected steps so the patch SSD
never increases across accepted iterations. Confidence is
exp(-SSD / (45 * sigma^2)), floored at a small epsilon; structureless
patches (singular template Hessian) and targets outside the usable margin
get the floor value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .imageops import bilinear_sample, central_gradients

SUPPORT_SPACING = 4
PATCH_MARGIN = SUPPORT_SPACING + 1
_OFF = np.array(
    [(dx, dy) for dy in (-SUPPORT_SPACING, 0, SUPPORT_SPACING) for dx in (-SUPPORT_SPACING, 0, SUPPORT_SPACING)],
    dtype=np.float64,
)  # (9, 2) as (dx, dy)
PATCH_SAMPLES = 9
NUM_CHANNELS = 5


@dataclass
class TrackerConfig:
    window_capacity: int = 10
    edge_radius: int = 2
    refine_rounds: int = 12
    refine_max_iters: int = 8
    refine_tol: float = 0.01
    ssd_sigma: float = 1.0
    omega_floor: float = 1e-4
    init_inv_depth: float = 0.5
    # An anchored target is re-seeded from reprojection only when the two
    # disagree by more than this many pixels (alignment basin escape).
    relock_px: float = 2.0
    # Integer-offset SSD pre-search radius for cold (never-anchored) targets;
    # widens the capture range beyond the gradient-descent basin.
    coarse_search_px: int = 4
    # Inverse depths written back to the patch graph are clipped into this
    # range. Without a ceiling a patch can wander to near-zero depth, where
    # any flow is explained by a vanishing baseline; enough such patches and
    # the robust kernel starts outvoting the sane geometry.
    inv_depth_range: tuple = (0.02, 20.0)

    def __post_init__(self):
        if self.window_capacity < 2:
            raise ValueError("window_capacity must be >= 2")
        if self.edge_radius < 1:
            raise ValueError("edge_radius must be >= 1")
        if min(self.refine_rounds, self.refine_max_iters) < 1:
            raise ValueError("refinement iteration counts must be >= 1")
        if self.ssd_sigma <= 0 or self.omega_floor <= 0 or self.refine_tol <= 0:
            raise ValueError("ssd_sigma, omega_floor and refine_tol must be positive")
        if self.init_inv_depth <= 0:
            raise ValueError("init_inv_depth must be positive")
        lo, hi = self.inv_depth_range
        if not (0 < lo < hi):
            raise ValueError("inv_depth_range must satisfy 0 < lo < hi")


@dataclass
class Patch:
    patch_id: int
    source_grid: int
    center: np.ndarray  # (2,) (x, y) at input resolution
    inv_depth: float


@dataclass
class Edge:
    patch_id: int
    target_grid: int
    target: np.ndarray  # (2,) (x, y) current flow target in the target grid
    omega: float = 1.0
    valid: bool = True
    # False until the target has survived one alignment pass. Unanchored
    # targets are re-seeded from reprojection; anchored ones persist so the
    # event data, not the solver state, pins the flow measurements.
    anchored: bool = False


def patch_center_from_score_coord(coord_yx):
    """Score-map (row, col) -> input-resolution (x, y) of the 4x4 block centre."""
    row, col = int(coord_yx[0]), int(coord_yx[1])
    return np.array([4.0 * col + 2.0, 4.0 * row + 2.0])


@dataclass
class WindowState:
    """Sliding optimization window: ordered grid indices and their poses."""

    capacity: int
    grid_indices: list = field(default_factory=list)
    poses: dict = field(default_factory=dict)  # grid index -> Pose
    times_us: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("window capacity must be >= 2")

    def add(self, grid_index, pose: Pose, t_us):
        if self.grid_indices and grid_index <= self.grid_indices[-1]:
            raise ValueError("grid indices must be added in increasing order")
        self.grid_indices.append(grid_index)
        self.poses[grid_index] = pose
        self.times_us[grid_index] = int(t_us)

    def remove(self, grid_index):
        self.grid_indices.remove(grid_index)
        self.poses.pop(grid_index)
        self.times_us.pop(grid_index)

    def over_capacity(self):
        return len(self.grid_indices) > self.capacity

    def oldest(self):
        return self.grid_indices[0]


class PatchGraph:
    """Patches plus (patch, target grid) edges, keyed for O(1) upkeep."""

    def __init__(self, intrinsics: CameraIntrinsics):
        self.intrinsics = intrinsics
        self.patches = {}  # patch_id -> Patch
        self.edges = {}  # (patch_id, target_grid) -> Edge
        self._next_id = 0

    def spawn_patches(self, grid_index, coords_yx, window: WindowState, init_inv_depth=0.5):
        """Create one patch per score-map coordinate on the given grid.

        Inverse depth starts at the median over patches currently sourced in
        the window, falling back to init_inv_depth when there are none.
        """
        in_window = set(window.grid_indices)
        depths = [
            p.inv_depth for p in self.patches.values() if p.source_grid in in_window
        ]
        d0 = float(np.median(depths)) if depths else float(init_inv_depth)
        created = []
        for coord in np.asarray(coords_yx).reshape(-1, 2):
            patch = Patch(self._next_id, grid_index, patch_center_from_score_coord(coord), d0)
            self.patches[patch.patch_id] = patch
            created.append(patch)
            self._next_id += 1
        return created

    def build_edges(self, window: WindowState, radius):
        """Connect every in-window patch to in-window grids within the radius.

        Temporal distance is counted in window positions (slots), so grids
        stay connected even when kept keyframes are far apart in absolute
        index. Existing edges are kept as-is; edges touching grids that left
        the window are removed. New edge targets start at the reprojection
        under the current window poses and depths.
        """
        in_window = set(window.grid_indices)
        slot = {g: i for i, g in enumerate(window.grid_indices)}
        for key in [
            k
            for k, e in self.edges.items()
            if e.target_grid not in in_window
            or self.patches[k[0]].source_grid not in in_window
        ]:
            del self.edges[key]
        for patch in self.patches.values():
            if patch.source_grid not in in_window:
                continue
            for j in window.grid_indices:
                if j == patch.source_grid or abs(slot[j] - slot[patch.source_grid]) > radius:
                    continue
                key = (patch.patch_id, j)
                if key in self.edges:
                    continue
                uv, z = reproject(
                    patch.center,
                    patch.inv_depth,
                    window.poses[patch.source_grid],
                    window.poses[j],
                    self.intrinsics,
                )
                edge = Edge(patch.patch_id, j, uv, omega=1.0, valid=z > 0.0)
                self.edges[key] = edge

    def remove_grid(self, grid_index):
        """Drop patches sourced at the grid and all edges touching it."""
        dead_patches = [pid for pid, p in self.patches.items() if p.source_grid == grid_index]
        for pid in dead_patches:
            del self.patches[pid]
        dead = set(dead_patches)
        for key in [
            k for k in self.edges if k[0] in dead or k[1] == grid_index
        ]:
            del self.edges[key]

    def edges_between(self, source_grid, target_grid):
        return [
            e
            for (pid, j), e in self.edges.items()
            if j == target_grid and self.patches[pid].source_grid == source_grid
        ]


def reproject(center_xy, inv_depth, pose_src, pose_dst, intrinsics):
    """Warp a pixel with inverse depth from the source to the destination view.

    Both poses are camera-to-world; the warp applies T_dst^-1 * T_src. Returns
    (uv, z_dst); z_dst <= 0 signals a point behind the destination camera and
    the returned uv is then meaningless. uv may fall outside the image; the
    caller filters.
    """
    if inv_depth <= 0.0:
        raise ValueError("inverse depth must be positive")
    point_src = intrinsics.backproject(np.asarray(center_xy, dtype=np.float64), inv_depth)
    point_dst = pose_dst.inverse().apply(pose_src.apply(point_src))
    uv, z = intrinsics.project(point_dst)
    return uv, float(z)


def grid_gradients(grid_data):
    """Per-channel spatial gradient images, computed once per grid."""
    gx, gy = central_gradients(grid_data)
    return gx, gy


def _support_points(centers):
    """(N, 2) centres -> (N, 9) x and y sample coordinates."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    x = centers[:, 0:1] + _OFF[:, 0][None, :]
    y = centers[:, 1:2] + _OFF[:, 1][None, :]
    return x, y


@dataclass
class PatchTemplates:
    """Stacked inverse-compositional templates for a batch of patches."""

    values: np.ndarray  # (N, 9, 5)
    gx: np.ndarray  # (N, 9, 5)
    gy: np.ndarray  # (N, 9, 5)
    hess: np.ndarray  # (N, 2, 2)
    hess_inv: np.ndarray  # (N, 2, 2); rows of zeros where degenerate
    degenerate: np.ndarray  # (N,) bool


def make_templates(grid_data, grads, centers) -> PatchTemplates:
    grid_data = np.asarray(grid_data, dtype=np.float64)
    gx_img, gy_img = grads
    x, y = _support_points(centers)
    values = bilinear_sample(grid_data, x, y)
    gx = bilinear_sample(gx_img, x, y)
    gy = bilinear_sample(gy_img, x, y)
    hxx = (gx * gx).sum(axis=(1, 2))
    hxy = (gx * gy).sum(axis=(1, 2))
    hyy = (gy * gy).sum(axis=(1, 2))
    hess = np.stack(
        [np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2
    )
    det = hxx * hyy - hxy * hxy
    degenerate = det < 1e-12
    hess_inv = np.zeros_like(hess)
    ok = ~degenerate
    inv_det = np.zeros_like(det)
    inv_det[ok] = 1.0 / det[ok]
    hess_inv[ok, 0, 0] = hyy[ok] * inv_det[ok]
    hess_inv[ok, 0, 1] = -hxy[ok] * inv_det[ok]
    hess_inv[ok, 1, 0] = -hxy[ok] * inv_det[ok]
    hess_inv[ok, 1, 1] = hxx[ok] * inv_det[ok]
    return PatchTemplates(values, gx, gy, hess, hess_inv, degenerate)


def concat_templates(parts) -> PatchTemplates:
    """Stack several template batches into one (row offsets are the caller's
    concern)."""
    return PatchTemplates(
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.gx for p in parts]),
        np.concatenate([p.gy for p in parts]),
        np.concatenate([p.hess for p in parts]),
        np.concatenate([p.hess_inv for p in parts]),
        np.concatenate([p.degenerate for p in parts]),
    )


def _in_margin(targets, width, height):
    return (
        (targets[:, 0] >= PATCH_MARGIN)
        & (targets[:, 0] <= width - 1 - PATCH_MARGIN)
        & (targets[:, 1] >= PATCH_MARGIN)
        & (targets[:, 1] <= height - 1 - PATCH_MARGIN)
    )


def _patch_ssd(target_data, templates, targets, rows):
    x, y = _support_points(targets)
    sampled = bilinear_sample(target_data, x, y)
    diff = sampled - templates.values[rows]
    return (diff * diff).sum(axis=(1, 2)), sampled


def refine_flow_batch(
    templates: PatchTemplates, rows, target_data, init_targets, cfg: TrackerConfig,
    search_px=0,
):
    """Refine flow targets for a batch of edges against one target grid.

    rows indexes the template batch per edge. Returns (targets, omegas,
    valid): invalid entries (outside the margin or degenerate templates)
    carry the initial target and the confidence floor. search_px > 0 runs an
    integer-offset SSD search around each initial target first, so cold
    starts can lock on beyond the descent basin.
    """
    rows = np.asarray(rows, dtype=np.int64)
    targets = np.asarray(init_targets, dtype=np.float64).reshape(-1, 2).copy()
    n = len(targets)
    h, w = target_data.shape[:2]
    valid = _in_margin(targets, w, h)
    degenerate = templates.degenerate[rows]
    active = valid & ~degenerate

    ssd = np.full(n, np.inf)
    if np.any(valid):
        ssd[valid], _ = _patch_ssd(target_data, templates, targets[valid], rows[valid])

    if search_px > 0 and np.any(active):
        idx = np.flatnonzero(active)
        best = targets[idx].copy()
        best_ssd = ssd[idx].copy()
        for dy in range(-search_px, search_px + 1):
            for dx in range(-search_px, search_px + 1):
                if dx == 0 and dy == 0:
                    continue
                cand = targets[idx] + np.array([dx, dy], dtype=np.float64)
                inside = _in_margin(cand, w, h)
                if not np.any(inside):
                    continue
                cand_ssd = np.full(len(idx), np.inf)
                cand_ssd[inside], _ = _patch_ssd(
                    target_data, templates, cand[inside], rows[idx][inside]
                )
                better = cand_ssd < best_ssd
                best[better] = cand[better]
                best_ssd[better] = cand_ssd[better]
        targets[idx] = best
        ssd[idx] = best_ssd

    live = active.copy()
    for _ in range(cfg.refine_max_iters):
        if not np.any(live):
            break
        idx = np.flatnonzero(live)
        r = rows[idx]
        x, y = _support_points(targets[idx])
        sampled = bilinear_sample(target_data, x, y)
        err = sampled - templates.values[r]
        bx = (templates.gx[r] * err).sum(axis=(1, 2))
        by = (templates.gy[r] * err).sum(axis=(1, 2))
        b = np.stack([bx, by], axis=-1)
        step = np.einsum("nij,nj->ni", templates.hess_inv[r], b)

        # backtracking: halve rejected steps; freeze edges that cannot improve
        scale = np.ones(len(idx))
        pending = np.ones(len(idx), dtype=bool)
        accepted_step = np.zeros_like(step)
        for _ in range(4):
            if not np.any(pending):
                break
            trial = targets[idx] - step * scale[:, None]
            inside = _in_margin(trial, w, h)
            trial_ssd = np.full(len(idx), np.inf)
            if np.any(inside & pending):
                sel = inside & pending
                trial_ssd[sel], _ = _patch_ssd(target_data, templates, trial[sel], r[sel])
            improve = pending & (trial_ssd <= ssd[idx])
            if np.any(improve):
                targets[idx[improve]] = trial[improve]
                ssd[idx[improve]] = trial_ssd[improve]
                accepted_step[improve] = step[improve] * scale[improve, None]
                pending[improve] = False
            # out-of-margin trials at full scale invalidate the edge
            oob = pending & ~inside & (scale == 1.0)
            if np.any(oob):
                valid[idx[oob]] = False
                live[idx[oob]] = False
                pending[oob] = False
            scale *= 0.5
        live[idx[pending]] = False  # no improving step found
        moved = np.linalg.norm(accepted_step, axis=1)
        live[idx[(moved < cfg.refine_tol) & ~pending]] = False

    omegas = np.full(n, cfg.omega_floor)
    ok = valid & np.isfinite(ssd)
    denom = PATCH_SAMPLES * NUM_CHANNELS * cfg.ssd_sigma**2
    omegas[ok] = np.clip(np.exp(-ssd[ok] / denom), cfg.omega_floor, 1.0)
    omegas[degenerate] = cfg.omega_floor
    valid = valid & ~degenerate
    return targets, omegas, valid


def flow_refine(edge: Edge, patch: Patch, source_grid_data, target_grid_data, cfg: TrackerConfig):
    """Single-edge convenience wrapper; returns (delta, omega).

    delta is the refined target minus the edge's current target. The edge is
    not mutated; the caller applies the update.
    """
    templates = make_templates(
        source_grid_data, grid_gradients(source_grid_data), patch.center[None, :]
    )
    targets, omegas, valid = refine_flow_batch(
        templates, np.zeros(1, dtype=np.int64), target_grid_data, edge.target[None, :], cfg
    )
    return targets[0] - edge.target, float(omegas[0]) if valid[0] else cfg.omega_floor


def compute_gt_flow(patches, edges, poses_by_grid, inv_depth_by_grid, intrinsics):
    """Reference flows from ground-truth poses and depth maps.

    Returns {(patch_id, target_grid): flow}; edges whose patch sits on an
    undefined-depth pixel (map value <= 0) are excluded.
    """
    by_id = {p.patch_id: p for p in patches}
    out = {}
    for edge in edges:
        patch = by_id[edge.patch_id]
        depth_map = inv_depth_by_grid[patch.source_grid]
        px = int(round(float(patch.center[0])))
        py = int(round(float(patch.center[1])))
        if py < 0 or py >= depth_map.shape[0] or px < 0 or px >= depth_map.shape[1]:
            continue
        d = float(depth_map[py, px])
        if d <= 0.0:
            continue
        uv, z = reproject(
            patch.center,
            d,
            poses_by_grid[patch.source_grid],
            poses_by_grid[edge.target_grid],
            intrinsics,
        )
        if z <= 0.0:
            continue
        out[(edge.patch_id, edge.target_grid)] = uv - patch.center
    return out


def keyframe_decision(window: WindowState, graph: PatchGraph, threshold):
    """Keep the newest grid iff mean flow to/from the previous grid >= threshold.

    Flow magnitude is ||edge target - patch centre|| over valid edges between
    the two most recent in-window grids (both directions). No edges means no
    measurable motion, which counts as below threshold.
    """
    if len(window.grid_indices) < 2:
        raise ValueError("keyframe decision needs at least two grids in the window")
    a, b = window.grid_indices[-2], window.grid_indices[-1]
    mags = []
    for src, dst in ((a, b), (b, a)):
        for edge in graph.edges_between(src, dst):
            if not edge.valid:
                continue
            center = graph.patches[edge.patch_id].center
            mags.append(np.linalg.norm(edge.target - center))
    mean_flow = float(np.mean(mags)) if mags else 0.0
    return mean_flow >= threshold, mean_flow
