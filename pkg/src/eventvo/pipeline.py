"""End-to-end odometry: windows -> grids -> scores -> patches -> refinement.

Each fixed-duration event window becomes one voxel grid. The grid is
normalized, scored, and seeded with patches at the sampled coordinates; the
new grid joins the sliding window with a constant-velocity pose guess. Every
window update runs a fixed number of refinement rounds, each re-targeting all
edges from the current geometry, aligning them against their target grids,
and solving the windowed bundle adjustment on the refreshed flow targets.
A window whose mean flow against the previous keyframe stays below the
threshold is dropped again (recorded as a relative pose); the oldest grid is
marginalized once capacity is exceeded.

Empty windows are degenerate: the pose is extrapolated and flagged, but the
run keeps going. Sampler or solver failures likewise fall back to
extrapolation and count as failures; a run aborts only when more than half
of all windows fail. Every random draw comes from named substreams of the
root seed, so a run is bit-reproducible.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .ba import BAConfig, BAProblem, solve
from .config import RunConfig
from .events import validate_events
from .geometry import Pose
from .metrics import MetricReport, evaluate_trajectories
from .sampling import SamplingError, sample_coordinates
from .scene import render_scene
from .scorer import ScorerWeights, gradient_scorer, init_scorer_weights, scorer_forward
from .simulate import generate_events
from .tracking import (
    PatchGraph,
    WindowState,
    concat_templates,
    grid_gradients,
    keyframe_decision,
    make_templates,
    refine_flow_batch,
)
from .trajectory import Trajectory
from .voxel import build_voxel_grid, normalize, photometric_augment


class PipelineError(RuntimeError):
    pass


def derive_rng(seed, name):
    """Named substream of the root seed; stable across runs and platforms."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    )


class RunLog:
    def __init__(self):
        self.lines = []
        self.windows = 0
        self.failed = 0
        self.degenerate = 0

    def add(self, line):
        self.lines.append(line)

    def text(self):
        return "\n".join(self.lines) + "\n"

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.text())


@dataclass
class RunResult:
    trajectory: Trajectory
    log: RunLog
    sample_rows: list = field(default_factory=list)  # (t_sec, x_sc, y_sc, score)
    flow_rows: list = field(default_factory=list)  # (patch_id, grid_j, x, y, omega)


def _extrapolate(estimates, k):
    prev = estimates.get(k - 1)
    if prev is None:
        return Pose.identity()
    prev2 = estimates.get(k - 2)
    if prev2 is None:
        return prev.copy()
    delta = prev.compose(prev2.inverse())
    return delta.compose(prev)


class _WindowEngine:
    """Per-run state: grids, templates, the patch graph and the edge arrays."""

    def __init__(self, cfg: RunConfig, weights):
        self.cfg = cfg
        self.intr = cfg.camera
        self.graph = PatchGraph(self.intr)
        self.window = WindowState(capacity=cfg.tracker.window_capacity)
        self.grid_data = {}
        self.grid_grads = {}
        self.templates = {}  # grid -> (PatchTemplates, {patch_id: row})
        self.weights = weights

    def score(self, grid_data):
        if self.weights is None:
            return gradient_scorer(grid_data)
        score, _ = scorer_forward(grid_data, self.weights)
        return score

    def add_grid(self, k, grid_data, pose, t_mid_us, coords):
        self.window.add(k, pose, t_mid_us)
        self.grid_data[k] = grid_data
        self.grid_grads[k] = grid_gradients(grid_data)
        patches = self.graph.spawn_patches(
            k, coords, self.window, self.cfg.tracker.init_inv_depth
        )
        tmpl = make_templates(grid_data, self.grid_grads[k], [p.center for p in patches])
        self.templates[k] = (tmpl, {p.patch_id: i for i, p in enumerate(patches)})
        self.graph.build_edges(self.window, self.cfg.tracker.edge_radius)

    def drop_grid(self, k):
        self.graph.remove_grid(k)
        if k in self.window.grid_indices:
            self.window.remove(k)
        self.grid_data.pop(k, None)
        self.grid_grads.pop(k, None)
        self.templates.pop(k, None)

    def refine_and_solve(self, log, window_index):
        """Runs the refinement rounds; returns the last SolveReport or raises."""
        cfg = self.cfg
        grids = self.window.grid_indices
        pos_of = {g: i for i, g in enumerate(grids)}
        edges = list(self.graph.edges.values())
        if not edges:
            raise PipelineError("no edges to refine")
        patch_ids = sorted({e.patch_id for e in edges} | set(self.graph.patches))
        slot_of = {pid: i for i, pid in enumerate(patch_ids)}

        e_src = np.array(
            [pos_of[self.graph.patches[e.patch_id].source_grid] for e in edges]
        )
        e_dst = np.array([pos_of[e.target_grid] for e in edges])
        e_slot = np.array([slot_of[e.patch_id] for e in edges])
        e_centers = np.stack([self.graph.patches[e.patch_id].center for e in edges])
        # one combined template batch across all source grids, so each
        # destination refines in two calls (cold, warm) instead of per source
        row_base = {}
        offset = 0
        for g in grids:
            row_base[g] = offset
            offset += len(self.templates[g][0].values)
        all_templates = concat_templates([self.templates[g][0] for g in grids])
        e_rows = np.array(
            [
                row_base[self.graph.patches[e.patch_id].source_grid]
                + self.templates[self.graph.patches[e.patch_id].source_grid][1][
                    e.patch_id
                ]
                for e in edges
            ]
        )
        targets = np.stack([e.target for e in edges])
        omegas = np.array([e.omega for e in edges])
        valid = np.array([e.valid for e in edges])
        anchored = np.array([e.anchored for e in edges])
        # refinement is deterministic in (template, grid, seed), so an edge
        # is only worth re-running when its seed moved since the last attempt
        last_seed = np.full_like(targets, np.inf)

        report = None
        for rnd in range(cfg.tracker.refine_rounds):
            depths = np.array(
                [self.graph.patches[pid].inv_depth for pid in patch_ids]
            )
            r_arr = np.stack([self.window.poses[g].rotation_matrix() for g in grids])
            t_arr = np.stack([self.window.poses[g].t for g in grids])
            x_i = self.intr.backproject(e_centers, depths[e_slot])
            x_w = np.einsum("eab,eb->ea", r_arr[e_src], x_i) + t_arr[e_src]
            x_j = np.einsum(
                "eba,eb->ea", r_arr[e_dst], x_w - t_arr[e_dst]
            )
            uv, z = self.intr.project(x_j)
            in_front = z > 1e-8
            # Anchored targets are measurements; re-seed from reprojection
            # only fresh/invalid edges, or when the pose state disagrees so
            # strongly the old lock is outside the alignment basin.
            off_basin = (
                np.linalg.norm(uv - targets, axis=1) > cfg.tracker.relock_px
            )
            reseed = ~anchored | ~valid | off_basin
            targets = np.where((reseed & in_front)[:, None], uv, targets)
            valid = np.where(reseed, in_front, valid)
            # a re-seeded target is cold again: it must re-find the data's
            # lock by search, not inherit the pose state's echo
            anchored = anchored & ~reseed

            moved = np.linalg.norm(targets - last_seed, axis=1) > 0.25
            for g in grids:
                sel = np.flatnonzero((e_dst == pos_of[g]) & valid & (~anchored) & moved)
                if len(sel) == 0:
                    continue
                last_seed[sel] = targets[sel]
                new_t, new_o, new_v = refine_flow_batch(
                    all_templates,
                    e_rows[sel],
                    self.grid_data[g],
                    targets[sel],
                    cfg.tracker,
                    search_px=cfg.tracker.coarse_search_px,
                )
                targets[sel] = new_t
                omegas[sel] = new_o
                valid[sel] = new_v
                anchored[sel] = anchored[sel] | new_v

            mask = valid & (omegas > 0.0)
            if not np.any(mask):
                raise PipelineError("all edges invalid during refinement")
            # Two views cannot separate per-patch depth from baseline scale:
            # the problem is flat along that manifold and the solve slides.
            # Until a third view exists, keep every depth at its prior and
            # recover pose only. From then on the oldest in-window grid's
            # patch depths (its oldest patch included) pin the scale; one
            # pinned depth alone is a gauge the robust kernel can silence by
            # down-weighting that patch's few edges, and the scale then walks.
            if len(grids) < 3:
                fixed_depths = frozenset(range(len(patch_ids)))
            else:
                oldest = grids[0]
                fixed_depths = frozenset(
                    slot
                    for pid, slot in slot_of.items()
                    if self.graph.patches[pid].source_grid == oldest
                ) or frozenset([0])
            problem = BAProblem(
                poses=[self.window.poses[g] for g in grids],
                inv_depths=depths,
                pose_i=e_src[mask],
                pose_j=e_dst[mask],
                patch_idx=e_slot[mask],
                centers=e_centers[mask],
                targets=targets[mask],
                weights=omegas[mask],
                intrinsics=self.intr,
                fixed_poses=frozenset([0]),
                fixed_depths=fixed_depths,
            )
            new_poses, new_depths, report = solve(problem, cfg.ba)
            log.add(f"w={window_index} round={rnd} " + report.to_log_line())
            if report.failure is not None:
                raise PipelineError(f"solver failure: {report.failure}")
            for i, g in enumerate(grids):
                self.window.poses[g] = new_poses[i]
            lo_d, hi_d = cfg.tracker.inv_depth_range
            for pid, slot in slot_of.items():
                self.graph.patches[pid].inv_depth = float(
                    np.clip(new_depths[slot], lo_d, hi_d)
                )

        for e, t_new, o_new, v_new, a_new in zip(
            edges, targets, omegas, valid, anchored
        ):
            e.target = t_new
            e.omega = float(o_new)
            e.valid = bool(v_new)
            e.anchored = bool(a_new)
        return report


def run_vo(events, cfg: RunConfig, weights: ScorerWeights = None, t_range=None) -> RunResult:
    """Track a single event stream. Deterministic given config and seed."""
    if cfg.camera is None:
        raise ValueError("run config needs a camera section")
    intr = cfg.camera
    validate_events(events, intr.width, intr.height)
    if t_range is not None:
        t0, t_end = int(t_range[0]), int(t_range[1])
    elif len(events):
        t0, t_end = int(events["t"][0]), int(events["t"][-1]) + 1
    else:
        raise ValueError("empty event stream without an explicit time range")
    n_windows = max(1, int(np.ceil((t_end - t0) / cfg.window_us)))

    if cfg.scorer.kind == "network" and weights is None:
        if cfg.scorer.weights is not None:
            weights = ScorerWeights.load(cfg.scorer.weights)
        else:
            weights = init_scorer_weights(derive_rng(cfg.seed, "scorer-init"))
    if cfg.scorer.kind == "gradient":
        weights = None

    rng_sampler = derive_rng(cfg.seed, "sampler")
    rng_augment = derive_rng(cfg.seed, "augment")
    engine = _WindowEngine(cfg, weights)
    log = RunLog()
    log.add(f"run seed={cfg.seed} windows={n_windows} window_us={cfg.window_us}")

    estimates = {}  # window index -> best-known absolute pose (static copies)
    records = {}  # window index -> ("abs", k) live / ("rel", prev, delta) / ("fix", pose)
    result = RunResult(Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4))), log)
    times_mid_us = {}

    def est(k):
        if k in engine.window.poses:
            return engine.window.poses[k]
        return estimates.get(k)

    def record_rel(k):
        prev = k - 1
        pose = _extrapolate({i: est(i) for i in (k - 1, k - 2) if est(i) is not None}, k)
        if est(prev) is not None:
            delta = est(prev).inverse().compose(pose)
            records[k] = ("rel", prev, delta)
        else:
            records[k] = ("fix", pose)
        estimates[k] = pose

    for k in range(n_windows):
        w0 = t0 + k * cfg.window_us
        w1 = min(w0 + cfg.window_us, t_end)
        t_mid_us = (w0 + w1) // 2
        times_mid_us[k] = t_mid_us
        lo, hi = np.searchsorted(events["t"], [w0, w1])
        evs = events[lo:hi]
        log.windows += 1

        if len(evs) == 0:
            record_rel(k)
            log.degenerate += 1
            log.add(f"window k={k} events=0 status=degenerate")
            continue

        grid = build_voxel_grid(evs, (w0, w1), intr)
        if cfg.augment.enabled:
            grid = photometric_augment(grid, cfg.augment.params(cfg.seed), rng_augment)
        ngrid = normalize(grid)
        score_map = engine.score(ngrid.data)
        try:
            coords = sample_coordinates(score_map, cfg.sampler, rng_sampler)
        except SamplingError as exc:
            record_rel(k)
            log.failed += 1
            log.add(f"window k={k} events={len(evs)} status=failed reason=sampler:{exc}")
            continue

        t_sec = t_mid_us * 1e-6
        for row, col in coords:
            result.sample_rows.append((t_sec, int(col), int(row), float(score_map[row, col])))

        pose_init = _extrapolate({i: est(i) for i in (k - 1, k - 2) if est(i) is not None}, k)
        engine.add_grid(k, ngrid.data, pose_init, t_mid_us, coords)
        records[k] = ("abs", k)

        status = "ok"
        mean_flow = 0.0
        if len(engine.window.grid_indices) >= 2:
            try:
                engine.refine_and_solve(log, k)
            except PipelineError as exc:
                engine.drop_grid(k)
                record_rel(k)
                log.failed += 1
                log.add(f"window k={k} events={len(evs)} status=failed reason={exc}")
                continue

            keep, mean_flow = keyframe_decision(
                engine.window, engine.graph, cfg.keyframe_thresh
            )
            if not keep:
                prev = engine.window.grid_indices[-2]
                delta = engine.window.poses[prev].inverse().compose(engine.window.poses[k])
                estimates[k] = engine.window.poses[k].copy()
                records[k] = ("rel", prev, delta)
                engine.drop_grid(k)
                status = "dropped"

        while engine.window.over_capacity():
            old = engine.window.oldest()
            estimates[old] = engine.window.poses[old].copy()
            records[old] = ("fix", estimates[old])
            engine.drop_grid(old)

        log.add(
            f"window k={k} events={len(evs)} status={status} mean_flow={mean_flow:.3f} "
            f"patches={len(engine.graph.patches)} edges={len(engine.graph.edges)}"
        )

    if log.failed * 2 > log.windows:
        raise PipelineError(
            f"{log.failed} of {log.windows} windows failed; aborting run"
        )

    # resolve every window pose: live ones from the window, relative records
    # against their (possibly refined) anchors, ascending order
    final = {}
    for k in range(n_windows):
        kind = records[k][0]
        if kind == "abs":
            final[k] = engine.window.poses.get(k) or estimates[k]
        elif kind == "fix":
            final[k] = records[k][1]
        else:
            _, prev, delta = records[k]
            final[k] = final[prev].compose(delta)

    for e in engine.graph.edges.values():
        result.flow_rows.append(
            (e.patch_id, e.target_grid, float(e.target[0]), float(e.target[1]), e.omega)
        )
    times = np.array([times_mid_us[k] * 1e-6 for k in range(n_windows)])
    result.trajectory = Trajectory.from_poses(times, [final[k] for k in range(n_windows)])
    log.add(f"done windows={log.windows} failed={log.failed} degenerate={log.degenerate}")
    return result


@dataclass
class TrialOutcome:
    seed: int
    ok: bool
    report: MetricReport | None = None
    error: str | None = None


@dataclass
class TrialsSummary:
    outcomes: list

    @property
    def failures(self):
        return sum(1 for o in self.outcomes if not o.ok)

    def _values(self, attr):
        vals = [
            getattr(o.report, attr)
            for o in self.outcomes
            if o.ok and getattr(o.report, attr) is not None
        ]
        return vals

    def median(self, attr):
        vals = self._values(attr)
        return float(np.median(vals)) if vals else None

    def mean(self, attr):
        vals = self._values(attr)
        return float(np.mean(vals)) if vals else None


def simulate_scene_events(scene_cfg, sim_section, seed, bundle=None):
    """Render (or reuse) the ground-truth bundle and simulate one event stream."""
    if bundle is None:
        scene = scene_cfg.build()
        bundle = render_scene(scene, scene_cfg.frame_timestamps())
    sim_cfg = sim_section.config(seed, rng=derive_rng(seed, "sim"))
    events = generate_events(bundle.frames, sim_cfg)
    return events, bundle


def run_trials(run_cfg: RunConfig, gt: Trajectory, n_trials=None, events=None,
               scene_cfg=None, sim_section=None, bundle=None, event_cache=None,
               max_dt=0.01, t_range=None) -> TrialsSummary:
    """n runs with seeds seed+0..n-1; per-metric medians over the successes.

    Either a fixed event stream or a scene config (re-simulated per seed,
    optionally cached in event_cache keyed by seed) must be provided. t_range
    restricts every trial to a sub-span of the stream (e.g. a fixed prefix).
    """
    n = n_trials if n_trials is not None else run_cfg.trials
    outcomes = []
    for i in range(n):
        seed = run_cfg.seed + i
        cfg = _with_seed(run_cfg, seed)
        try:
            if events is not None:
                trial_events = events
                span = t_range
            else:
                if event_cache is not None and seed in event_cache:
                    trial_events, bundle = event_cache[seed]
                else:
                    trial_events, bundle = simulate_scene_events(
                        scene_cfg, sim_section, seed, bundle=bundle
                    )
                    if event_cache is not None:
                        event_cache[seed] = (trial_events, bundle)
                span = t_range
                if span is None:
                    span = (0, int(bundle.frames.timestamps_us[-1]) + 1)
            result = run_vo(trial_events, cfg, t_range=span)
            report = evaluate_trajectories(result.trajectory, gt, max_dt=max_dt)
            outcomes.append(TrialOutcome(seed, True, report))
        except (PipelineError, ValueError) as exc:
            outcomes.append(TrialOutcome(seed, False, None, str(exc)))
    return TrialsSummary(outcomes)


def _with_seed(cfg: RunConfig, seed) -> RunConfig:
    import copy

    out = copy.deepcopy(cfg)
    out.seed = seed
    out.sampler.seed = seed
    return out


ABLATION_COLUMNS = (
    ("random", dict(strategy="random")),
    ("gradient", dict(strategy="pooled_multinomial", scorer="gradient")),
    ("three_p_random", dict(strategy="three_p_random")),
    ("top_p", dict(strategy="top_p")),
    ("multinomial_no_pool", dict(strategy="multinomial")),
    ("multinomial_no_grid", dict(strategy="multinomial", grid_cells=1)),
    ("pooled_multinomial", dict(strategy="pooled_multinomial")),
)


def ablate(run_cfg: RunConfig, scene_cfg, sim_section, gt: Trajectory, strategies=None,
           n_trials=None, max_dt=0.01, t_range=None):
    """Strategy sweep on one scene; returns [(name, TrialsSummary)] rows."""
    import copy

    names = [name for name, _ in ABLATION_COLUMNS]
    wanted = strategies if strategies is not None else names
    unknown = sorted(set(wanted) - set(names))
    if unknown:
        raise ValueError(f"unknown ablation strategies {unknown}; choose from {names}")
    cache = {}
    rows = []
    for name, spec in ABLATION_COLUMNS:
        if name not in wanted:
            continue
        cfg = copy.deepcopy(run_cfg)
        cfg.sampler.strategy = spec["strategy"]
        if "grid_cells" in spec:
            cfg.sampler.grid_cells = spec["grid_cells"]
        if spec.get("scorer"):
            cfg.scorer.kind = spec["scorer"]
            cfg.scorer.weights = None
        summary = run_trials(
            cfg, gt, n_trials=n_trials, scene_cfg=scene_cfg,
            sim_section=sim_section, event_cache=cache, max_dt=max_dt,
            t_range=t_range,
        )
        rows.append((name, summary))
    return rows


def ablation_csv(rows):
    header = "strategy,trials,failures,mean_ate_cm,median_ate_cm,median_r_rmse_deg,median_mpe_pct"
    lines = [header]
    for name, s in rows:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6g}"

        lines.append(
            f"{name},{len(s.outcomes)},{s.failures},{fmt(s.mean('ate_cm'))},"
            f"{fmt(s.median('ate_cm'))},{fmt(s.median('r_rmse_deg'))},{fmt(s.median('mpe_pct'))}"
        )
    return "\n".join(lines) + "\n"
