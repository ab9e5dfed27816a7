"""Trajectory error metrics under a single Sim(3) alignment.

The estimate is aligned to the reference once (Umeyama closed form, scale
estimated exactly once); every metric is then a direct formula on the aligned
samples. Positions are metres internally; ATE is reported in centimetres,
rotation RMSE in degrees, position error in percent drift per travelled
distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import matrix_from_quat, quat_from_matrix, quat_multiply
from .trajectory import Trajectory, associate

MPE_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5)


class AlignmentError(ValueError):
    pass


@dataclass
class Sim3:
    scale: float
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def apply(self, points):
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def apply_quats(self, quats):
        rq = quat_from_matrix(self.rotation)
        return np.stack([quat_multiply(rq, q) for q in np.asarray(quats)])


def umeyama_sim3(est_points, ref_points) -> Sim3:
    """Least-squares similarity with ref ~ s R est + t.

    Needs at least three non-collinear point pairs; collinear or degenerate
    geometry leaves the rotation unconstrained and raises AlignmentError.
    """
    est = np.asarray(est_points, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref_points, dtype=np.float64).reshape(-1, 3)
    if est.shape != ref.shape:
        raise ValueError("point sets must have equal shape")
    n = len(est)
    if n < 3:
        raise AlignmentError(f"similarity alignment needs >= 3 pairs, got {n}")
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    de = est - mu_e
    dr = ref - mu_r
    var_e = (de * de).sum() / n
    cov = dr.T @ de / n
    u, s, vt = np.linalg.svd(cov)
    if var_e < 1e-18 or s[1] < 1e-9 * max(s[0], 1e-300):
        raise AlignmentError("degenerate geometry: point sets do not fix a rotation")
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.diag([1.0, 1.0, sign])
    rot = u @ d @ vt
    scale = float(np.trace(np.diag(s) @ d) / var_e)
    trans = mu_r - scale * rot @ mu_e
    return Sim3(scale, rot, trans)


def ate_rmse_cm(aligned_est_xyz, ref_xyz) -> float:
    """Translation RMSE in centimetres over already-aligned positions."""
    a = np.asarray(aligned_est_xyz, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(ref_xyz, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape or len(a) == 0:
        raise ValueError("position arrays must be non-empty and of equal shape")
    return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean())) * 100.0


def rotation_rmse_deg(aligned_est_quats, ref_quats) -> float:
    """Geodesic rotation RMSE in degrees over already-aligned orientations."""
    qa = np.asarray(aligned_est_quats, dtype=np.float64).reshape(-1, 4)
    qb = np.asarray(ref_quats, dtype=np.float64).reshape(-1, 4)
    if qa.shape != qb.shape or len(qa) == 0:
        raise ValueError("quaternion arrays must be non-empty and of equal shape")
    angles = []
    for a, b in zip(qa, qb):
        r_rel = matrix_from_quat(a).T @ matrix_from_quat(b)
        c = np.clip((np.trace(r_rel) - 1.0) / 2.0, -1.0, 1.0)
        angles.append(np.degrees(np.arccos(c)))
    return float(np.sqrt(np.mean(np.square(angles))))


def path_length(xyz) -> float:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(xyz) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(xyz, axis=0), axis=1).sum())


def mean_position_error_pct(aligned_est_xyz, ref_xyz, fractions=MPE_FRACTIONS):
    """Mean sub-trajectory drift, percent per travelled metre equivalent.

    For each target length (a fraction of the total reference path) and each
    start sample, the segment ends at the first sample where the travelled
    reference path reaches the target; the segment error is the difference of
    the endpoint displacements, divided by the segment path and scaled by
    100. Returns None when the reference path is shorter than one metre, in
    which case the metric is not meaningful at this scale.
    """
    est = np.asarray(aligned_est_xyz, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref_xyz, dtype=np.float64).reshape(-1, 3)
    if est.shape != ref.shape or len(est) < 2:
        raise ValueError("need equal-shape arrays with at least two samples")
    steps = np.linalg.norm(np.diff(ref, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    total = cum[-1]
    if total < 1.0:
        return None
    errors = []
    for frac in fractions:
        target = frac * total
        ends = np.searchsorted(cum, cum + target, side="left")
        for i, j in enumerate(ends):
            if j >= len(cum) or j <= i:
                continue
            seg = cum[j] - cum[i]
            if seg <= 0.0:
                continue
            diff = (est[j] - est[i]) - (ref[j] - ref[i])
            errors.append(100.0 * np.linalg.norm(diff) / seg)
    if not errors:
        return None
    return float(np.mean(errors))


@dataclass
class MetricReport:
    ate_cm: float
    r_rmse_deg: float
    mpe_pct: float | None
    matched: int
    scale: float

    def rows(self):
        mpe = "n/a" if self.mpe_pct is None else f"{self.mpe_pct:.6g}"
        return [
            ("ate_cm", f"{self.ate_cm:.6g}"),
            ("r_rmse_deg", f"{self.r_rmse_deg:.6g}"),
            ("mpe_pct", mpe),
            ("matched", str(self.matched)),
            ("scale", f"{self.scale:.6g}"),
        ]

    def table(self):
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)

    def csv(self):
        rows = self.rows()
        return (
            ",".join(k for k, _ in rows) + "\n" + ",".join(v for _, v in rows) + "\n"
        )


def evaluate_trajectories(est: Trajectory, ref: Trajectory, max_dt=0.01) -> MetricReport:
    """Associate, align once, and compute all metrics."""
    ei, ri = associate(est, ref, max_dt=max_dt)
    est_xyz = est.positions[ei]
    ref_xyz = ref.positions[ri]
    sim = umeyama_sim3(est_xyz, ref_xyz)
    aligned = sim.apply(est_xyz)
    aligned_q = sim.apply_quats(est.quats[ei])
    return MetricReport(
        ate_cm=ate_rmse_cm(aligned, ref_xyz),
        r_rmse_deg=rotation_rmse_deg(aligned_q, ref.quats[ri]),
        mpe_pct=mean_position_error_pct(aligned, ref_xyz),
        matched=len(ei),
        scale=sim.scale,
    )
