"""Synthetic scenes and their renderer.

Two scene kinds share one interface: a textured plane sampled by ray casting
(bilinear texture lookup, well-defined inverse depth everywhere) and a sparse
landmark cloud drawn as z-buffered splats (inverse depth defined only at
splat pixels, 0 elsewhere). The camera follows a spline through control
poses: cubic interpolation for translation, spherical for rotation, exact at
the control timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import CameraIntrinsics, Pose, slerp
from .imageops import bilinear_sample
from .simulate import FrameSequence
from .trajectory import Trajectory


class SceneValidityError(ValueError):
    pass


@dataclass
class CameraPath:
    times_us: np.ndarray  # (K,) strictly increasing
    positions: np.ndarray  # (K, 3)
    quats: np.ndarray  # (K, 4) xyzw

    def __post_init__(self):
        self.times_us = np.asarray(self.times_us, dtype=np.int64).reshape(-1)
        k = len(self.times_us)
        if k < 2:
            raise ValueError("camera path needs at least two control poses")
        if np.any(np.diff(self.times_us) <= 0):
            raise ValueError("control timestamps must be strictly increasing")
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(k, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(k, 4)
        t = self.times_us.astype(np.float64)
        if k >= 3:
            self._spline = CubicSpline(t, self.positions, axis=0)
        else:
            self._spline = None

    def pose_at(self, t_us) -> Pose:
        t = float(t_us)
        t0, t1 = self.times_us[0], self.times_us[-1]
        if t < t0 or t > t1:
            raise ValueError(f"sample time {t_us} outside control range [{t0}, {t1}]")
        if self._spline is not None:
            pos = self._spline(t)
        else:
            pos = np.array(
                [
                    np.interp(t, self.times_us.astype(np.float64), self.positions[:, d])
                    for d in range(3)
                ]
            )
        k = int(np.searchsorted(self.times_us, t, side="right")) - 1
        k = min(max(k, 0), len(self.times_us) - 2)
        span = self.times_us[k + 1] - self.times_us[k]
        alpha = (t - self.times_us[k]) / span
        q = slerp(self.quats[k], self.quats[k + 1], alpha)
        return Pose(q, pos)


@dataclass
class SyntheticScene:
    """Either texture (plane mode) or landmarks/albedos (splat mode) is set."""

    intrinsics: CameraIntrinsics
    path: CameraPath
    texture: np.ndarray | None = None  # (Ht, Wt) in [0, 1]
    plane_pose: Pose = field(default_factory=Pose.identity)
    plane_extent: tuple = (-1.0, 1.0, -1.0, 1.0)  # (x0, x1, y0, y1) in plane frame
    landmarks: np.ndarray | None = None  # (N, 3) world points
    albedos: np.ndarray | None = None  # (N,) in [0, 1]
    background: float = 0.5

    def __post_init__(self):
        has_plane = self.texture is not None
        has_points = self.landmarks is not None
        if has_plane == has_points:
            raise ValueError("scene needs exactly one of texture or landmarks")
        if has_plane:
            self.texture = np.asarray(self.texture, dtype=np.float64)
            if self.texture.ndim != 2:
                raise ValueError("texture must be a 2D grayscale array")
            x0, x1, y0, y1 = self.plane_extent
            if not (x1 > x0 and y1 > y0):
                raise ValueError("plane_extent must have positive area")
        else:
            self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
            if self.albedos is None:
                raise ValueError("landmark scenes need albedos")
            self.albedos = np.asarray(self.albedos, dtype=np.float64).reshape(-1)
            if len(self.albedos) != len(self.landmarks):
                raise ValueError("one albedo per landmark required")


@dataclass
class GroundTruthBundle:
    frames: FrameSequence
    poses: Trajectory
    inv_depth_maps: np.ndarray  # (T, H, W); 0 where undefined


def _pixel_ray_dirs(intr: CameraIntrinsics):
    xs = (np.arange(intr.width) - intr.cx) / intr.fx
    ys = (np.arange(intr.height) - intr.cy) / intr.fy
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy, np.ones_like(gx)], axis=-1)  # (H, W, 3)


def _render_plane(scene: SyntheticScene, pose: Pose, dirs):
    plane_inv = scene.plane_pose.inverse()
    origin = plane_inv.apply(pose.t)
    d = (plane_inv.rotation_matrix() @ pose.rotation_matrix() @ dirs[..., None])[..., 0]
    dz = d[..., 2]
    if np.any(np.abs(dz) < 1e-12):
        raise SceneValidityError("pixel ray parallel to the scene plane")
    lam = -origin[2] / dz
    if np.any(lam <= 0.0):
        raise SceneValidityError("scene plane behind the camera for some pixel")
    hit = origin + lam[..., None] * d
    x0, x1, y0, y1 = scene.plane_extent
    ht, wt = scene.texture.shape
    tx = (hit[..., 0] - x0) / (x1 - x0) * (wt - 1)
    ty = (hit[..., 1] - y0) / (y1 - y0) * (ht - 1)
    frame = bilinear_sample(scene.texture, tx, ty)
    # the ray direction has unit z in the camera frame, so depth z_cam = lam
    return np.clip(frame, 0.0, 1.0), 1.0 / lam


def _render_landmarks(scene: SyntheticScene, pose: Pose, intr: CameraIntrinsics):
    cam = pose.inverse().apply(scene.landmarks)
    z = cam[:, 2]
    if np.any(z <= 0.0):
        raise SceneValidityError("landmark behind the camera")
    uv, _ = intr.project(cam)
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    frame = np.full((intr.height, intr.width), scene.background, dtype=np.float64)
    depth = np.zeros((intr.height, intr.width), dtype=np.float64)
    zbuf = np.full((intr.height, intr.width), np.inf)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    for i in np.flatnonzero(inside):
        if z[i] < zbuf[v[i], u[i]]:
            zbuf[v[i], u[i]] = z[i]
            frame[v[i], u[i]] = scene.albedos[i]
            depth[v[i], u[i]] = 1.0 / z[i]
    return frame, depth


def render_scene(scene: SyntheticScene, timestamps_us) -> GroundTruthBundle:
    """Render frames, camera-to-world poses and inverse depth maps."""
    timestamps_us = np.asarray(timestamps_us, dtype=np.int64)
    if len(timestamps_us) < 2:
        raise ValueError("rendering needs at least two timestamps")
    intr = scene.intrinsics
    dirs = _pixel_ray_dirs(intr) if scene.texture is not None else None
    frames = np.empty((len(timestamps_us), intr.height, intr.width))
    depths = np.empty_like(frames)
    poses = []
    for i, t in enumerate(timestamps_us):
        pose = scene.path.pose_at(t)
        if scene.texture is not None:
            frames[i], depths[i] = _render_plane(scene, pose, dirs)
        else:
            frames[i], depths[i] = _render_landmarks(scene, pose, intr)
        poses.append(pose)
    traj = Trajectory.from_poses(timestamps_us.astype(np.float64) * 1e-6, poses)
    return GroundTruthBundle(FrameSequence(frames, timestamps_us), traj, depths)


def smooth_noise_texture(size, rng, octaves=4, lo=0.1, hi=0.9):
    """Band-limited random texture in [lo, hi]: sum of upsampled noise octaves."""
    tex = np.zeros((size, size))
    for o in range(octaves):
        cells = max(2, size >> (octaves - 1 - o))
        coarse = rng.standard_normal((cells, cells))
        ys = np.linspace(0, cells - 1, size)
        xs = np.linspace(0, cells - 1, size)
        gx, gy = np.meshgrid(xs, ys)
        tex += bilinear_sample(coarse, gx, gy) / (2.0**o)
    tex -= tex.min()
    span = tex.max()
    if span > 0:
        tex /= span
    return lo + (hi - lo) * tex


def downward_orbit_path(
    radius, height, duration_us, n_control=17, center=(0.0, 0.0), turns=1.0
):
    """Control poses for a circular orbit at fixed height, camera looking down.

    The camera keeps a fixed orientation (optical axis along -z world) so the
    ground plane stays in view for the whole orbit.
    """
    # x_cam -> x_world, y_cam -> -y_world, z_cam -> -z_world (right-handed)
    q_down = np.array([1.0, 0.0, 0.0, 0.0])  # 180 degrees about x
    times = np.linspace(0, duration_us, n_control).astype(np.int64)
    angles = np.linspace(0.0, 2.0 * np.pi * turns, n_control)
    positions = np.stack(
        [
            center[0] + radius * np.cos(angles),
            center[1] + radius * np.sin(angles),
            np.full(n_control, float(height)),
        ],
        axis=-1,
    )
    quats = np.tile(q_down, (n_control, 1))
    return CameraPath(times, positions, quats)
