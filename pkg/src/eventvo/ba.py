"""Sliding-window bundle adjustment over patch reprojection residuals.

State: camera-to-world poses (unit quaternion + translation) and one inverse
depth per patch. A residual is the predicted reprojection of a patch centre
into the target view minus the flow target, weighted by the edge confidence
and a Huber robust weight. Pose updates are exponential-map retractions on
the 6-dof tangent (translation, rotation), applied by left multiplication;
depth updates are additive and clamped positive. Damped Gauss-Newton steps
solve the normal equations after eliminating the per-patch depth scalars with
a Schur complement, which is exact: the reduced solve matches the unreduced
dense solve. Gauge freedom is removed by fixing at least one pose and,
optionally, one inverse depth (scale).

Jacobian convention, with X_w the patch point in world coordinates and
A = dproj/dX_j @ R_j^T: the source-pose Jacobian is A @ [I | -skew(X_w)], the
target-pose Jacobian is its negation, and the depth Jacobian is
-A @ R_i @ X_i / d. Points behind the target camera make the residual
invalid; its weight is zeroed for that iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, retract

MIN_INV_DEPTH = 1e-4
_Z_EPS = 1e-8


@dataclass
class BAConfig:
    iterations: int = 2
    huber_delta: float = 2.0
    damping_init: float = 1e-4
    max_escalations: int = 10
    min_update: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.huber_delta <= 0 or self.damping_init <= 0:
            raise ValueError("huber_delta and damping_init must be positive")
        if self.max_escalations < 0:
            raise ValueError("max_escalations must be non-negative")


@dataclass
class BAProblem:
    """Poses, inverse depths and the edge observations binding them.

    Arrays are per observation: source pose index i, target pose index j,
    patch index, patch centre in view i, flow target in view j, confidence
    weight. fixed_poses / fixed_depths hold gauge indices.
    """

    poses: list
    inv_depths: np.ndarray
    pose_i: np.ndarray
    pose_j: np.ndarray
    patch_idx: np.ndarray
    centers: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    intrinsics: CameraIntrinsics
    fixed_poses: frozenset = field(default_factory=frozenset)
    fixed_depths: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.inv_depths = np.asarray(self.inv_depths, dtype=np.float64).reshape(-1)
        self.pose_i = np.asarray(self.pose_i, dtype=np.int64).reshape(-1)
        self.pose_j = np.asarray(self.pose_j, dtype=np.int64).reshape(-1)
        self.patch_idx = np.asarray(self.patch_idx, dtype=np.int64).reshape(-1)
        n = len(self.pose_i)
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(n, 2)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(n, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(n)
        self.fixed_poses = frozenset(int(i) for i in self.fixed_poses)
        self.fixed_depths = frozenset(int(i) for i in self.fixed_depths)
        np_ = len(self.poses)
        nd = len(self.inv_depths)
        if n == 0:
            raise ValueError("problem must contain at least one observation")
        for name, arr, bound in (
            ("pose_i", self.pose_i, np_),
            ("pose_j", self.pose_j, np_),
            ("patch_idx", self.patch_idx, nd),
        ):
            if np.any(arr < 0) or np.any(arr >= bound):
                raise ValueError(f"{name} index out of range")
        if np.any(self.pose_i == self.pose_j):
            raise ValueError("observations must connect two distinct poses")
        if np.any(self.inv_depths <= 0.0):
            raise ValueError("inverse depths must be positive")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be non-negative")
        if not self.fixed_poses:
            raise ValueError("at least one gauge-fixed pose required")
        if not self.fixed_poses <= set(range(np_)):
            raise ValueError("fixed pose index out of range")
        if not self.fixed_depths <= set(range(nd)):
            raise ValueError("fixed depth index out of range")


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    max_pose_update: float
    converged: bool
    failure: str | None = None

    def to_log_line(self):
        """Fixed field order, one line, for run-log regression diffing."""
        return (
            f"ba iters={self.iterations} cost0={self.initial_cost:.9e} "
            f"cost1={self.final_cost:.9e} max_update={self.max_pose_update:.3e} "
            f"converged={int(self.converged)} failure={self.failure or 'none'}"
        )


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _gather_pose_arrays(poses):
    R = np.stack([p.rotation_matrix() for p in poses])
    t = np.stack([p.t for p in poses])
    return R, t


def residuals_and_jacobians(problem: BAProblem, poses, inv_depths, with_jacobians=True):
    """Vectorized residuals r = prediction - target and their Jacobians.

    Returns (r, valid, J_pose, J_depth) where J_pose is the source-pose block
    (the target-pose block is its negation) and J_depth the per-observation
    depth column. Invalid observations (target z <= 0) carry zero rows.
    """
    intr = problem.intrinsics
    R, t = _gather_pose_arrays(poses)
    ii, jj, kk = problem.pose_i, problem.pose_j, problem.patch_idx
    d = inv_depths[kk]
    x_i = intr.backproject(problem.centers, d)  # (E, 3)
    x_w = np.einsum("eab,eb->ea", R[ii], x_i) + t[ii]
    r_j_t = np.transpose(R[jj], (0, 2, 1))
    x_j = np.einsum("eab,eb->ea", r_j_t, x_w - t[jj])
    z = x_j[:, 2]
    valid = z > _Z_EPS
    uv, _ = intr.project(x_j)
    r = np.where(valid[:, None], uv - problem.targets, 0.0)
    if not with_jacobians:
        return r, valid, None, None

    zs = np.where(valid, z, 1.0)
    dproj = np.zeros((len(z), 2, 3))
    dproj[:, 0, 0] = intr.fx / zs
    dproj[:, 0, 2] = -intr.fx * x_j[:, 0] / (zs * zs)
    dproj[:, 1, 1] = intr.fy / zs
    dproj[:, 1, 2] = -intr.fy * x_j[:, 1] / (zs * zs)
    a = np.einsum("eab,ebc->eac", dproj, r_j_t)  # (E, 2, 3)
    j_pose = np.concatenate(
        [a, -np.einsum("eab,ebc->eac", a, _skew_batch(x_w))], axis=2
    )  # (E, 2, 6): translation block, rotation block
    j_depth = -np.einsum(
        "eab,eb->ea", a, np.einsum("eab,eb->ea", R[ii], x_i)
    ) / d[:, None]
    j_pose[~valid] = 0.0
    j_depth[~valid] = 0.0
    return r, valid, j_pose, j_depth


def _huber(r, valid, weights, delta):
    """Per-observation robust cost rho and IRLS weight, zeroed when invalid."""
    s = (r * r).sum(axis=1)
    small = s <= delta * delta
    rho = np.where(small, s, 2.0 * delta * np.sqrt(np.maximum(s, 1e-300)) - delta * delta)
    w_rob = np.where(small, 1.0, delta / np.sqrt(np.maximum(s, 1e-300)))
    eff = np.where(valid, weights * w_rob, 0.0)
    cost = float((np.where(valid, weights, 0.0) * rho).sum())
    return cost, eff


def robust_cost(problem: BAProblem, poses, inv_depths, delta):
    r, valid, _, _ = residuals_and_jacobians(problem, poses, inv_depths, with_jacobians=False)
    cost, _ = _huber(r, valid, problem.weights, delta)
    return cost


def schur_solve(h_pp, h_pd, h_dd, g_p, g_d, pivot_tol=1e-12):
    """Solve the damped normal equations by eliminating the depth scalars.

    Depth entries whose (damped) diagonal falls below pivot_tol relative to
    the largest depth pivot are frozen at zero update. Raises
    numpy.linalg.LinAlgError if the reduced pose system is not positive
    definite, which the caller treats as a damping-escalation signal.
    """
    h_dd = np.asarray(h_dd, dtype=np.float64)
    scale = h_dd.max() if len(h_dd) else 0.0
    free = h_dd > pivot_tol * max(scale, 1e-300)
    inv_dd = np.zeros_like(h_dd)
    inv_dd[free] = 1.0 / h_dd[free]
    h_red = h_pp - (h_pd * inv_dd[None, :]) @ h_pd.T
    g_red = g_p - h_pd @ (inv_dd * g_d)
    L = np.linalg.cholesky(h_red)
    dp = np.linalg.solve(L.T, np.linalg.solve(L, -g_red))
    dd = -inv_dd * (g_d + h_pd.T @ dp)
    return dp, dd


def _assemble(problem, r, j_pose, j_depth, eff_w, free_pose_col, free_depth_col, n_fp, n_fd):
    e = len(r)
    jtj = np.einsum("eai,e,eaj->eij", j_pose, eff_w, j_pose)  # (E, 6, 6)
    jtr = np.einsum("eai,e,ea->ei", j_pose, eff_w, r)  # (E, 6)
    jtd = np.einsum("eai,e,ea->ei", j_pose, eff_w, j_depth)  # (E, 6)
    dtd = np.einsum("ea,e,ea->e", j_depth, eff_w, j_depth)  # (E,)
    dtr = np.einsum("ea,e,ea->e", j_depth, eff_w, r)  # (E,)

    bi = free_pose_col[problem.pose_i]
    bj = free_pose_col[problem.pose_j]
    kd = free_depth_col[problem.patch_idx]

    h_pp = np.zeros((n_fp, n_fp, 6, 6))
    g_p = np.zeros((n_fp, 6))
    h_pd = np.zeros((n_fp, n_fd, 6))
    h_dd = np.zeros(n_fd)
    g_d = np.zeros(n_fd)

    mi = bi >= 0
    mj = bj >= 0
    md = kd >= 0
    # J_j = -J_i: the (i, i) and (j, j) blocks share jtj, the cross blocks flip sign
    np.add.at(h_pp, (bi[mi], bi[mi]), jtj[mi])
    np.add.at(h_pp, (bj[mj], bj[mj]), jtj[mj])
    both = mi & mj
    np.add.at(h_pp, (bi[both], bj[both]), -jtj[both])
    np.add.at(h_pp, (bj[both], bi[both]), -jtj[both])
    np.add.at(g_p, bi[mi], jtr[mi])
    np.add.at(g_p, bj[mj], -jtr[mj])

    np.add.at(h_dd, kd[md], dtd[md])
    np.add.at(g_d, kd[md], dtr[md])
    mid = mi & md
    mjd = mj & md
    np.add.at(h_pd, (bi[mid], kd[mid]), jtd[mid])
    np.add.at(h_pd, (bj[mjd], kd[mjd]), -jtd[mjd])

    h_pp = h_pp.transpose(0, 2, 1, 3).reshape(6 * n_fp, 6 * n_fp)
    h_pd = h_pd.transpose(0, 2, 1).reshape(6 * n_fp, n_fd)
    return h_pp, h_pd, h_dd, g_p.reshape(-1), g_d


def solve(problem: BAProblem, config: BAConfig = None):
    """Damped Gauss-Newton. Returns (poses, inv_depths, SolveReport).

    Inputs are never mutated; gauge-fixed poses and depths pass through
    bit-identical. The report's final cost never exceeds the initial cost.
    """
    if config is None:
        config = BAConfig()
    poses = [p.copy() for p in problem.poses]
    depths = problem.inv_depths.copy()

    free_poses = [i for i in range(len(poses)) if i not in problem.fixed_poses]
    observed = set(problem.patch_idx.tolist())
    free_depths = [
        k for k in range(len(depths)) if k not in problem.fixed_depths and k in observed
    ]
    free_pose_col = np.full(len(poses), -1, dtype=np.int64)
    for c, i in enumerate(free_poses):
        free_pose_col[i] = c
    free_depth_col = np.full(len(depths), -1, dtype=np.int64)
    for c, k in enumerate(free_depths):
        free_depth_col[k] = c

    cost = robust_cost(problem, poses, depths, config.huber_delta)
    report = SolveReport(0, cost, cost, 0.0, True)
    if not free_poses:
        return poses, depths, report

    lam = config.damping_init
    for _ in range(config.iterations):
        r, valid, j_pose, j_depth = residuals_and_jacobians(problem, poses, depths)
        if not np.any(valid):
            report.failure = "no valid observations"
            report.converged = False
            break
        _, eff_w = _huber(r, valid, problem.weights, config.huber_delta)
        h_pp, h_pd, h_dd, g_p, g_d = _assemble(
            problem, r, j_pose, j_depth, eff_w,
            free_pose_col, free_depth_col, len(free_poses), len(free_depths),
        )

        accepted = False
        escalations = 0
        while escalations <= config.max_escalations:
            damped_pp = h_pp + lam * np.diag(np.diag(h_pp))
            damped_dd = h_dd * (1.0 + lam)
            try:
                dp, dd = schur_solve(damped_pp, h_pd, damped_dd, g_p, g_d)
            except np.linalg.LinAlgError:
                lam *= 10.0
                escalations += 1
                continue
            cand_poses = list(poses)
            for c, i in enumerate(free_poses):
                cand_poses[i] = retract(poses[i], dp[6 * c : 6 * c + 6])
            cand_depths = depths.copy()
            if free_depths:
                cand_depths[free_depths] = np.maximum(
                    cand_depths[free_depths] + dd, MIN_INV_DEPTH
                )
            cand_cost = robust_cost(problem, cand_poses, cand_depths, config.huber_delta)
            if cand_cost <= cost:
                pose_updates = [
                    np.linalg.norm(dp[6 * c : 6 * c + 6]) for c in range(len(free_poses))
                ]
                step = max(
                    max(pose_updates),
                    float(np.max(np.abs(dd))) if len(dd) else 0.0,
                )
                poses, depths, cost = cand_poses, cand_depths, cand_cost
                report.iterations += 1
                report.max_pose_update = max(report.max_pose_update, max(pose_updates))
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                break
            lam *= 10.0
            escalations += 1
        if not accepted:
            # No damping level yields a downhill step: the state sits on a
            # plateau or local minimum. That is a stopping condition, not an
            # error; the current state is the best one found.
            report.converged = False
            break
        report.final_cost = cost
        if step < config.min_update:
            break

    report.final_cost = cost
    return poses, depths, report
