"""Run and scene configuration files (YAML), schema-validated on load.

Every section is checked against its known keys; unknown keys are rejected
rather than ignored, so typos fail loudly before a run starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .ba import BAConfig
from .geometry import CameraIntrinsics, Pose
from .sampling import SamplerConfig
from .scene import CameraPath, SyntheticScene, downward_orbit_path, smooth_noise_texture
from .simulate import SimConfig
from .tracking import TrackerConfig
from .voxel import AugmentParams


class ConfigError(ValueError):
    pass


def _require_mapping(obj, context):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(obj).__name__}")
    return obj


def _check_keys(d, allowed, context):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")


def _build(cls, d, context, **overrides):
    d = _require_mapping(d, context)
    merged = dict(d)
    merged.update(overrides)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass
class AugmentSection:
    enabled: bool = False
    gain_range: tuple = (1.0, 1.0)
    drop_fraction_range: tuple = (0.0, 0.0)
    hot_pixel_rate: float = 0.0

    def params(self, seed) -> AugmentParams:
        return AugmentParams(
            gain_range=tuple(self.gain_range),
            drop_fraction_range=tuple(self.drop_fraction_range),
            hot_pixel_rate=self.hot_pixel_rate,
            seed=seed,
        )


@dataclass
class ScorerSection:
    kind: str = "gradient"
    weights: str | None = None

    def __post_init__(self):
        if self.kind not in ("gradient", "network"):
            raise ValueError(f"scorer kind must be 'gradient' or 'network', got {self.kind!r}")


@dataclass
class SimSection:
    c_pos: float = 0.25
    c_neg: float = 0.25
    log_eps: float = 1e-3
    randomize_thresholds: bool = True
    threshold_range: tuple = (0.16, 0.34)
    threshold_jitter: float = 0.0
    refractory_us: int = 0

    def config(self, seed, rng=None) -> SimConfig:
        c_pos, c_neg = self.c_pos, self.c_neg
        if self.randomize_thresholds:
            if rng is None:
                rng = np.random.default_rng(seed)
            from .simulate import randomize_thresholds

            c_pos, c_neg = randomize_thresholds(rng, tuple(self.threshold_range))
        return SimConfig(
            c_pos=c_pos,
            c_neg=c_neg,
            log_eps=self.log_eps,
            threshold_jitter=self.threshold_jitter,
            refractory_us=self.refractory_us,
            seed=seed,
        )


@dataclass
class RunConfig:
    seed: int = 0
    trials: int = 1
    window_us: int = 5000
    keyframe_thresh: float = 15.0
    camera: CameraIntrinsics | None = None
    sim: SimSection = field(default_factory=SimSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(patches=16, grid_cells=4))
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    ba: BAConfig = field(default_factory=BAConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.window_us < 1:
            raise ValueError("window_us must be >= 1")
        if self.keyframe_thresh < 0.0:
            raise ValueError("keyframe_thresh must be non-negative")


_RUN_KEYS = (
    "seed",
    "trials",
    "window_us",
    "keyframe_thresh",
    "camera",
    "sim",
    "augment",
    "scorer",
    "sampler",
    "tracker",
    "ba",
)


def run_config_from_dict(d) -> RunConfig:
    d = _require_mapping(d, "run config")
    _check_keys(d, _RUN_KEYS, "run config")
    camera = None
    if d.get("camera") is not None:
        camera = _build(CameraIntrinsics, d["camera"], "camera")
    try:
        return RunConfig(
            seed=int(d.get("seed", 0)),
            trials=int(d.get("trials", 1)),
            window_us=int(d.get("window_us", 5000)),
            keyframe_thresh=float(d.get("keyframe_thresh", 15.0)),
            camera=camera,
            sim=_build(SimSection, d.get("sim"), "sim"),
            augment=_build(AugmentSection, d.get("augment"), "augment"),
            scorer=_build(ScorerSection, d.get("scorer"), "scorer"),
            sampler=_build(
                SamplerConfig,
                d.get("sampler") or {"patches": 16, "grid_cells": 4},
                "sampler",
            ),
            tracker=_build(TrackerConfig, d.get("tracker"), "tracker"),
            ba=_build(BAConfig, d.get("ba"), "ba"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    return run_config_from_dict(data)


@dataclass
class SceneConfig:
    """Declarative synthetic scene: exactly one of texture/noise or landmarks."""

    intrinsics: CameraIntrinsics
    frame_count: int
    duration_us: int
    texture_path: str | None = None
    noise: dict | None = None
    plane_extent: tuple = (-1.0, 1.0, -1.0, 1.0)
    background: float = 0.5
    landmarks: dict | None = None
    control_poses: list | None = None
    orbit: dict | None = None

    def build(self) -> SyntheticScene:
        if (self.control_poses is None) == (self.orbit is None):
            raise ConfigError("scene: exactly one of control_poses or orbit required")
        if self.orbit is not None:
            orbit = dict(self.orbit)
            _check_keys(
                orbit, ("radius", "height", "n_control", "center", "turns"), "scene.orbit"
            )
            path = downward_orbit_path(
                radius=float(orbit.get("radius", 0.5)),
                height=float(orbit.get("height", 2.0)),
                duration_us=self.duration_us,
                n_control=int(orbit.get("n_control", 17)),
                center=tuple(orbit.get("center", (0.0, 0.0))),
                turns=float(orbit.get("turns", 1.0)),
            )
        else:
            times, positions, quats = [], [], []
            for i, cp in enumerate(self.control_poses):
                cp = _require_mapping(cp, f"scene.control_poses[{i}]")
                _check_keys(cp, ("t_us", "position", "quat_xyzw"), f"scene.control_poses[{i}]")
                times.append(int(cp["t_us"]))
                positions.append([float(v) for v in cp["position"]])
                quats.append([float(v) for v in cp.get("quat_xyzw", (0, 0, 0, 1))])
            path = CameraPath(np.array(times), np.array(positions), np.array(quats))

        plane_sources = sum(x is not None for x in (self.texture_path, self.noise))
        if self.landmarks is not None and plane_sources:
            raise ConfigError("scene: choose either a plane texture or landmarks, not both")
        if self.landmarks is None and plane_sources != 1:
            raise ConfigError("scene: exactly one of texture, noise or landmarks required")

        if self.landmarks is not None:
            lm = dict(self.landmarks)
            _check_keys(lm, ("count", "seed", "box", "albedo_range"), "scene.landmarks")
            rng = np.random.default_rng(int(lm.get("seed", 0)))
            box = np.asarray(lm.get("box", [[-1, 1], [-1, 1], [0.5, 1.5]]), dtype=np.float64)
            count = int(lm.get("count", 100))
            pts = rng.uniform(box[:, 0], box[:, 1], size=(count, 3))
            alo, ahi = lm.get("albedo_range", (0.1, 0.9))
            albedos = rng.uniform(float(alo), float(ahi), size=count)
            return SyntheticScene(
                intrinsics=self.intrinsics,
                path=path,
                landmarks=pts,
                albedos=albedos,
                background=self.background,
            )

        if self.texture_path is not None:
            texture = _load_texture(self.texture_path)
        else:
            noise = dict(self.noise)
            _check_keys(noise, ("size", "seed", "octaves", "lo", "hi"), "scene.noise")
            rng = np.random.default_rng(int(noise.get("seed", 0)))
            texture = smooth_noise_texture(
                int(noise.get("size", 256)),
                rng,
                octaves=int(noise.get("octaves", 4)),
                lo=float(noise.get("lo", 0.1)),
                hi=float(noise.get("hi", 0.9)),
            )
        return SyntheticScene(
            intrinsics=self.intrinsics,
            path=path,
            texture=texture,
            plane_extent=tuple(self.plane_extent),
            background=self.background,
        )

    def frame_timestamps(self):
        return np.linspace(0, self.duration_us, self.frame_count).astype(np.int64)


def _load_texture(path):
    if str(path).endswith(".evtk"):
        from . import container

        tex = container.read_tensor(path)
    else:
        import matplotlib.image as mpimg

        tex = np.asarray(mpimg.imread(path), dtype=np.float64)
        if tex.ndim == 3:
            tex = tex[..., :3].mean(axis=2)
        if tex.max() > 1.0:
            tex = tex / 255.0
    return np.clip(tex, 0.0, 1.0)


_SCENE_KEYS = (
    "intrinsics",
    "frame_count",
    "duration_us",
    "texture",
    "noise",
    "plane_extent",
    "background",
    "landmarks",
    "trajectory",
    "sim",
)


def scene_config_from_dict(d):
    """Returns (SceneConfig, SimSection)."""
    d = _require_mapping(d, "scene config")
    _check_keys(d, _SCENE_KEYS, "scene config")
    if "intrinsics" not in d:
        raise ConfigError("scene config: intrinsics required")
    intr = _build(CameraIntrinsics, d["intrinsics"], "scene.intrinsics")
    traj = _require_mapping(d.get("trajectory"), "scene.trajectory")
    _check_keys(traj, ("control_poses", "orbit"), "scene.trajectory")
    cfg = SceneConfig(
        intrinsics=intr,
        frame_count=int(d.get("frame_count", 200)),
        duration_us=int(d.get("duration_us", 1_000_000)),
        texture_path=d.get("texture"),
        noise=d.get("noise"),
        plane_extent=tuple(d.get("plane_extent", (-1.0, 1.0, -1.0, 1.0))),
        background=float(d.get("background", 0.5)),
        landmarks=d.get("landmarks"),
        control_poses=traj.get("control_poses"),
        orbit=traj.get("orbit"),
    )
    if cfg.frame_count < 2:
        raise ConfigError("scene config: frame_count must be >= 2")
    if cfg.duration_us < 1:
        raise ConfigError("scene config: duration_us must be >= 1")
    sim = _build(SimSection, d.get("sim"), "scene.sim")
    return cfg, sim


def load_scene_config(path):
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    return scene_config_from_dict(data)
