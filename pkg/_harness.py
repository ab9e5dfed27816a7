"""Scratch harness: fast orbit test scene + run helper. Not shipped."""
import time
import numpy as np

from eventvo.scene import (
    SyntheticScene,
    downward_orbit_path,
    render_scene,
    smooth_noise_texture,
)
from eventvo.simulate import SimConfig, generate_events
from eventvo.config import CameraIntrinsics, RunConfig
from eventvo.geometry import Pose
from eventvo.pipeline import run_vo
from eventvo.metrics import evaluate_trajectories, path_length

INTR = CameraIntrinsics(fx=60.0, fy=60.0, cx=31.5, cy=31.5, width=64, height=64)


def fast_scene(turns=6.0, duration_us=1_000_000, n_frames=801, c=0.08, seed=0,
               tilt_deg=0.0):
    rng = np.random.default_rng(7)
    tex = smooth_noise_texture(256, rng, octaves=3, lo=0.05, hi=0.95)
    path = downward_orbit_path(
        radius=0.5, height=2.0, duration_us=duration_us, n_control=65, turns=turns
    )
    if tilt_deg:
        a = np.deg2rad(tilt_deg)
        plane_pose = Pose(np.array([np.sin(a / 2), 0.0, 0.0, np.cos(a / 2)]),
                          np.zeros(3))
    else:
        plane_pose = Pose.identity()
    scene = SyntheticScene(
        intrinsics=INTR, path=path, texture=tex,
        plane_pose=plane_pose, plane_extent=(-3.0, 3.0, -3.0, 3.0),
    )
    ts = np.linspace(0, duration_us, n_frames).astype(np.int64)
    t0 = time.time()
    bundle = render_scene(scene, ts)
    ev = generate_events(bundle.frames, SimConfig(c_pos=c, c_neg=c, seed=seed))
    print(f"[harness] render+sim {time.time()-t0:.1f}s events={len(ev)}")
    return bundle, ev


def arc_scene(radius=3.0, turns=1.0, height=2.0, duration_us=1_000_000,
              n_frames=801, c=0.08, seed=0):
    """Gentle orbit: large radius, slow direction change, constant speed.

    Texture density is held at the reference 256px-per-6m so event statistics
    match across radii.
    """
    extent = radius + 1.6
    size = int(round(2 * extent * 256 / 6.0))
    rng = np.random.default_rng(7)
    tex = smooth_noise_texture(size, rng, octaves=3, lo=0.05, hi=0.95)
    path = downward_orbit_path(
        radius=radius, height=height, duration_us=duration_us,
        n_control=129, turns=turns,
    )
    scene = SyntheticScene(
        intrinsics=INTR, path=path, texture=tex,
        plane_extent=(-extent, extent, -extent, extent),
    )
    ts = np.linspace(0, duration_us, n_frames).astype(np.int64)
    t0 = time.time()
    bundle = render_scene(scene, ts)
    ev = generate_events(bundle.frames, SimConfig(c_pos=c, c_neg=c, seed=seed))
    print(f"[harness] render+sim {time.time()-t0:.1f}s events={len(ev)}")
    return bundle, ev


def run_prefix(ev, n_windows, seed=0, window_us=5000, scorer="gradient", **tweaks):
    cfg = RunConfig(camera=INTR, window_us=window_us, keyframe_thresh=0.0, seed=seed)
    cfg.scorer.kind = scorer
    for k, v in tweaks.items():
        obj = cfg
        parts = k.split(".")
        for p in parts[:-1]:
            obj = getattr(obj, p)
        setattr(obj, parts[-1], v)
    t0 = int(ev["t"][0])
    tA = time.time()
    res = run_vo(ev, cfg, t_range=(t0, t0 + n_windows * window_us))
    return res, time.time() - tA


def report(res, bundle, elapsed, label=""):
    est = res.trajectory
    gt = bundle.poses
    rep = evaluate_trajectories(est, gt, max_dt=0.01)
    steps = np.linalg.norm(np.diff(est.positions, axis=0), axis=1) * 1000
    failed = res.log.failed if hasattr(res.log, "failed") else -1
    np.set_printoptions(precision=1, suppress=True)
    print(
        f"{label}: ATE={rep.ate_cm:.2f}cm scale={rep.scale:.3f} "
        f"failed={failed} steps_mm med={np.median(steps):.1f} "
        f"first5={steps[:5]} last5={steps[-5:]} t={elapsed:.0f}s"
    )
    return rep
