"""Timestamped pose sequences and the plain-text trajectory file format.

File lines are "t_sec tx ty tz qx qy qz qw" with 9 significant digits,
quaternion in (x, y, z, w) order, poses camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_normalize


@dataclass
class Trajectory:
    times: np.ndarray  # (N,) seconds, strictly increasing
    positions: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) xyzw, unit norm

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        n = len(self.times)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        if n and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if n:
            self.quats = quat_normalize(self.quats)

    def __len__(self):
        return len(self.times)

    def pose(self, i) -> Pose:
        return Pose(self.quats[i], self.positions[i])

    @staticmethod
    def from_poses(times, poses) -> "Trajectory":
        times = np.asarray(times, dtype=np.float64)
        positions = np.stack([p.t for p in poses]) if len(poses) else np.zeros((0, 3))
        quats = np.stack([p.q for p in poses]) if len(poses) else np.zeros((0, 4))
        return Trajectory(times, positions, quats)


def write_trajectory(path, traj: Trajectory):
    with open(path, "w") as f:
        for t, p, q in zip(traj.times, traj.positions, traj.quats):
            fields = [t, p[0], p[1], p[2], q[0], q[1], q[2], q[3]]
            f.write(" ".join(f"{v:.9g}" for v in fields) + "\n")


def read_trajectory(path) -> Trajectory:
    rows = []
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}: expected 8 fields per line, got {len(parts)}")
            rows.append([float(v) for v in parts])
    if not rows:
        return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    arr = np.array(rows)
    return Trajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:8])


def associate(est: Trajectory, gt: Trajectory, max_dt=0.01):
    """Greedy nearest-timestamp matching; each sample matched at most once.

    Returns (est_idx, gt_idx) index arrays sorted by estimate time. Fewer than
    two matches raise, since no alignment is defined on less.
    """
    if len(est) == 0 or len(gt) == 0:
        raise ValueError("cannot associate empty trajectories")
    pairs = []
    for i, t in enumerate(est.times):
        j = int(np.argmin(np.abs(gt.times - t)))
        dt = abs(gt.times[j] - t)
        if dt <= max_dt:
            pairs.append((dt, i, j))
    pairs.sort()
    used_i, used_j = set(), set()
    matches = []
    for dt, i, j in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matches.append((i, j))
    if len(matches) < 2:
        raise ValueError(f"association produced {len(matches)} matches; need at least 2")
    matches.sort()
    est_idx = np.array([m[0] for m in matches])
    gt_idx = np.array([m[1] for m in matches])
    return est_idx, gt_idx
