"""Command line front end.

Subcommands: simulate (scene -> events + ground truth), voxelize (events ->
grid stack), run (events -> trajectory), eval (trajectory vs reference),
ablate (sampling-strategy sweep), plot (SVG figures). Exit codes: 0 success,
2 bad inputs or configuration, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import container
from .config import (
    ConfigError,
    load_run_config,
    load_scene_config,
)
from .events import read_events_text, write_events_text
from .geometry import CameraIntrinsics
from .metrics import AlignmentError, evaluate_trajectories
from .pipeline import (
    ABLATION_COLUMNS,
    PipelineError,
    ablate,
    ablation_csv,
    derive_rng,
    run_vo,
)
from .sampling import STRATEGIES, SamplingError, sample_coordinates
from .scene import SceneValidityError, render_scene
from .scorer import ScorerWeights, gradient_scorer, init_scorer_weights, scorer_forward
from .simulate import generate_events
from .trajectory import read_trajectory, write_trajectory
from .voxel import build_voxel_grid, normalize


def _cmd_simulate(args):
    scene_cfg, sim_section = load_scene_config(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene_cfg.build()
    bundle = render_scene(scene, scene_cfg.frame_timestamps())
    sim_cfg = sim_section.config(args.seed, rng=derive_rng(args.seed, "sim"))
    events = generate_events(bundle.frames, sim_cfg)

    write_events_text(out / "events.txt", events)
    write_trajectory(out / "gt_poses.txt", bundle.poses)
    container.write_tensor(out / "frames.evtk", bundle.frames.frames)
    container.write_tensor(out / "inv_depths.evtk", bundle.inv_depth_maps)
    manifest = {
        "events": "events.txt",
        "event_count": int(len(events)),
        "events_sha256": hashlib.sha256((out / "events.txt").read_bytes()).hexdigest(),
        "width": scene_cfg.intrinsics.width,
        "height": scene_cfg.intrinsics.height,
        "frame_count": scene_cfg.frame_count,
        "duration_us": scene_cfg.duration_us,
        "seed": args.seed,
        "c_pos": sim_cfg.c_pos,
        "c_neg": sim_cfg.c_neg,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(f"simulated {len(events)} events over {scene_cfg.duration_us} us -> {out}")
    return 0


def _window_bounds(t_first, t_last, window_us):
    n = max(1, int(np.ceil((t_last + 1 - t_first) / window_us)))
    return [(t_first + k * window_us, min(t_first + (k + 1) * window_us, t_last + 1)) for k in range(n)]


def _cmd_voxelize(args):
    events = read_events_text(args.events)
    if len(events) == 0:
        raise ValueError("no events to voxelize")
    intr = CameraIntrinsics(
        fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=args.width, height=args.height
    )
    grids = []
    for w0, w1 in _window_bounds(int(events["t"][0]), int(events["t"][-1]), args.window_us):
        lo, hi = np.searchsorted(events["t"], [w0, w1])
        grid = build_voxel_grid(events[lo:hi], (w0, w1), intr)
        if args.normalize:
            grid = normalize(grid)
        grids.append(grid.data)
    container.write_tensor(args.out, np.stack(grids))
    print(f"wrote {len(grids)} voxel grids of shape {grids[0].shape} -> {args.out}")
    return 0


def _cmd_run(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
        cfg.sampler.seed = int(args.seed)
    if args.strategy is not None:
        cfg.sampler.strategy = args.strategy
    if args.keyframe_thresh is not None:
        cfg.keyframe_thresh = float(args.keyframe_thresh)
    events = read_events_text(args.events)
    t_range = tuple(args.t_range) if args.t_range else None
    result = run_vo(events, cfg, t_range=t_range)
    write_trajectory(args.out, result.trajectory)
    if args.log:
        result.log.write(args.log)
    if args.samples_csv:
        with open(args.samples_csv, "w") as f:
            f.write("t,x_sc,y_sc,score\n")
            for t, x, y, s in result.sample_rows:
                f.write(f"{t:.6f},{x},{y},{s:.9g}\n")
    if args.flows_csv:
        with open(args.flows_csv, "w") as f:
            f.write("patch_id,grid_j,x,y,omega\n")
            for pid, j, x, y, om in result.flow_rows:
                f.write(f"{pid},{j},{x:.6f},{y:.6f},{om:.9g}\n")
    print(
        f"tracked {result.log.windows} windows "
        f"(failed={result.log.failed} degenerate={result.log.degenerate}) -> {args.out}"
    )
    return 0


def _cmd_eval(args):
    est = read_trajectory(args.est)
    ref = read_trajectory(args.ref)
    report = evaluate_trajectories(est, ref, max_dt=args.max_dt)
    print(report.table())
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(report.csv())
    return 0


def _cmd_ablate(args):
    scene_cfg, sim_section = load_scene_config(args.scene)
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    scene = scene_cfg.build()
    bundle = render_scene(scene, scene_cfg.frame_timestamps())
    strategies = args.strategies.split(",") if args.strategies else None
    rows = ablate(
        cfg,
        scene_cfg,
        sim_section,
        bundle.poses,
        strategies=strategies,
        n_trials=args.trials,
        max_dt=args.max_dt,
    )
    text = ablation_csv(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def _score_map_for_window(events, cfg, index):
    bounds = _window_bounds(int(events["t"][0]), int(events["t"][-1]), cfg.window_us)
    if index < 0 or index >= len(bounds):
        raise ValueError(f"window index {index} out of range (have {len(bounds)})")
    w0, w1 = bounds[index]
    lo, hi = np.searchsorted(events["t"], [w0, w1])
    if hi == lo:
        raise ValueError(f"window {index} contains no events")
    grid = normalize(build_voxel_grid(events[lo:hi], (w0, w1), cfg.camera))
    if cfg.scorer.kind == "network":
        if cfg.scorer.weights is not None:
            weights = ScorerWeights.load(cfg.scorer.weights)
        else:
            weights = init_scorer_weights(derive_rng(cfg.seed, "scorer-init"))
        score, _ = scorer_forward(grid.data, weights)
    else:
        score = gradient_scorer(grid.data)
    return score


def _cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    needs = {"trajectory": ("est",), "scoremap": ("events", "config"), "flows": ("events", "config")}
    missing = [f"--{n}" for n in needs[args.kind] if getattr(args, n) is None]
    if missing:
        raise ValueError(f"plot {args.kind} needs {' and '.join(missing)}")

    fig, ax = plt.subplots(figsize=(6, 5))
    if args.kind == "trajectory":
        est = read_trajectory(args.est)
        ax.plot(est.positions[:, 0], est.positions[:, 1], label="estimate")
        if args.ref:
            ref = read_trajectory(args.ref)
            ax.plot(ref.positions[:, 0], ref.positions[:, 1], "--", label="reference")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.axis("equal")
        ax.legend()
    elif args.kind == "scoremap":
        cfg = load_run_config(args.config)
        if cfg.camera is None:
            raise ConfigError("plot scoremap needs a camera section in the run config")
        events = read_events_text(args.events)
        score = _score_map_for_window(events, cfg, args.window_index)
        im = ax.imshow(score, cmap="viridis")
        fig.colorbar(im, ax=ax, label="score")
        if args.overlay_samples:
            coords = sample_coordinates(score, cfg.sampler)
            ax.scatter(coords[:, 1], coords[:, 0], c="red", marker="x", s=30)
        ax.set_title(f"window {args.window_index}")
    elif args.kind == "flows":
        cfg = load_run_config(args.config)
        events = read_events_text(args.events)
        result = run_vo(events, cfg)
        rows = np.array(
            [(x, y, om) for _, _, x, y, om in result.flow_rows], dtype=np.float64
        )
        if len(rows) == 0:
            raise ValueError("run produced no flow edges to plot")
        sc = ax.scatter(rows[:, 0], rows[:, 1], c=rows[:, 2], cmap="plasma", s=12)
        fig.colorbar(sc, ax=ax, label="confidence")
        ax.set_xlim(0, cfg.camera.width)
        ax.set_ylim(cfg.camera.height, 0)
        ax.set_xlabel("x [px]")
        ax.set_ylabel("y [px]")
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="eventvo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="render a scene and simulate events")
    sim.add_argument("--scene", required=True, help="scene YAML")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=_cmd_simulate)

    vox = sub.add_parser("voxelize", help="events -> stacked voxel grids (.evtk)")
    vox.add_argument("--events", required=True)
    vox.add_argument("--width", type=int, required=True)
    vox.add_argument("--height", type=int, required=True)
    vox.add_argument("--window-us", type=int, default=5000)
    vox.add_argument("--normalize", action="store_true")
    vox.add_argument("--out", required=True)
    vox.set_defaults(func=_cmd_voxelize)

    run = sub.add_parser("run", help="track an event stream")
    run.add_argument("--events", required=True)
    run.add_argument("--config", required=True, help="run YAML")
    run.add_argument("--out", required=True, help="output trajectory (TUM format)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--strategy", choices=STRATEGIES, default=None)
    run.add_argument("--keyframe-thresh", type=float, default=None)
    run.add_argument("--log", default=None, help="write the run log here")
    run.add_argument("--samples-csv", default=None)
    run.add_argument("--flows-csv", default=None)
    run.add_argument("--t-range", type=int, nargs=2, default=None, metavar=("T0", "T1"))
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="compare a trajectory against a reference")
    ev.add_argument("--est", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--max-dt", type=float, default=0.01)
    ev.add_argument("--csv", default=None)
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="sampling-strategy sweep on one scene")
    ab.add_argument("--scene", required=True)
    ab.add_argument("--config", required=True)
    ab.add_argument("--trials", type=int, default=None)
    ab.add_argument("--seed", type=int, default=None)
    ab.add_argument(
        "--strategies",
        default=None,
        help="comma-separated subset of: " + ",".join(name for name, _ in ABLATION_COLUMNS),
    )
    ab.add_argument("--max-dt", type=float, default=0.01)
    ab.add_argument("--out", default=None, help="write the CSV here")
    ab.set_defaults(func=_cmd_ablate)

    pl = sub.add_parser("plot", help="SVG figures")
    pl.add_argument("kind", choices=("trajectory", "scoremap", "flows"))
    pl.add_argument("--est", default=None)
    pl.add_argument("--ref", default=None)
    pl.add_argument("--events", default=None)
    pl.add_argument("--config", default=None)
    pl.add_argument("--window-index", type=int, default=0)
    pl.add_argument("--overlay-samples", action="store_true")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (
        ConfigError,
        SceneValidityError,
        SamplingError,
        AlignmentError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
