"""Quaternion / SE(3) utilities shared by the tracker, the solver and the metrics.

Quaternions are stored as (x, y, z, w) arrays, matching the trajectory file
layout. Poses are camera-to-world rigid transforms. Tangent vectors are 6-dof
(translation first, rotation second) and are applied by left multiplication,
T <- Exp(xi) * T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-15):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_multiply(q1, q2):
    """Hamilton product, (x, y, z, w) storage order."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    x1, y1, z1, w1 = np.moveaxis(q1, -1, 0)
    x2, y2, z2, w2 = np.moveaxis(q2, -1, 0)
    return np.stack(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., :3] *= -1.0
    return out


def quat_rotate(q, v):
    """Rotate vectors v (..., 3) by unit quaternion q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., :3]
    w = q[..., 3:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_rotvec(w):
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < _SMALL_ANGLE:
        # sin(t/2)/t ~ 1/2 - t^2/48
        s = 0.5 - theta * theta / 48.0
        return quat_normalize(np.array([w[0] * s, w[1] * s, w[2] * s, 1.0]))
    axis = w / theta
    half = 0.5 * theta
    s = np.sin(half)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(half)])


def rotvec_from_quat(q):
    q = quat_normalize(q)
    if q[3] < 0.0:
        q = -q
    sin_half = np.linalg.norm(q[:3])
    cos_half = q[3]
    if sin_half < _SMALL_ANGLE:
        return 2.0 * q[:3]
    theta = 2.0 * np.arctan2(sin_half, cos_half)
    return q[:3] * (theta / sin_half)


def matrix_from_quat(q):
    x, y, z, w = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R):
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([x, y, z, w]))


def quat_geodesic_angle(q1, q2):
    """Angle in radians of the rotation taking q1 to q2."""
    d = np.abs(np.sum(quat_normalize(q1) * quat_normalize(q2), axis=-1))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


def slerp(q0, q1, alpha):
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + alpha * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize(
        q0 * (np.sin((1.0 - alpha) * theta) / s) + q1 * (np.sin(alpha * theta) / s)
    )


def _skew(w):
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def _so3_left_jacobian(w):
    theta2 = float(np.dot(w, w))
    W = _skew(w)
    if theta2 < _SMALL_ANGLE**2:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    theta = np.sqrt(theta2)
    A = (1.0 - np.cos(theta)) / theta2
    B = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + A * W + B * (W @ W)


def _so3_left_jacobian_inv(w):
    theta2 = float(np.dot(w, w))
    W = _skew(w)
    if theta2 < _SMALL_ANGLE**2:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    theta = np.sqrt(theta2)
    half = 0.5 * theta
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * W + ((1.0 - cot) / theta2) * (W @ W)


@dataclass
class Pose:
    """Camera-to-world rigid transform: x_world = R x_cam + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=np.float64).reshape(4))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        return Pose(quat_multiply(self.q, other.q), quat_rotate(self.q, other.t) + self.t)

    def __mul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.q)
        return Pose(qc, -quat_rotate(qc, self.t))

    def apply(self, points):
        return quat_rotate(self.q, np.asarray(points, dtype=np.float64)) + self.t

    def rotation_matrix(self):
        return matrix_from_quat(self.q)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.t
        return M

    def copy(self) -> "Pose":
        return Pose(self.q.copy(), self.t.copy())


def se3_exp(xi) -> Pose:
    """Exponential map; xi = (translation, rotation) 6-vector."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    v, w = xi[:3], xi[3:]
    return Pose(quat_from_rotvec(w), _so3_left_jacobian(w) @ v)


def se3_log(pose: Pose):
    w = rotvec_from_quat(pose.q)
    v = _so3_left_jacobian_inv(w) @ pose.t
    return np.concatenate([v, w])


def retract(pose: Pose, xi) -> Pose:
    """Left-multiplicative update T <- Exp(xi) * T, quaternion renormalized."""
    return se3_exp(xi).compose(pose)


@dataclass
class CameraIntrinsics:
    """Pinhole camera with positive focal lengths and an integer sensor size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("sensor size must be positive")
        self.width = int(self.width)
        self.height = int(self.height)

    def backproject(self, uv, inv_depth):
        """Pixel coordinates + inverse depth -> camera-frame points.

        uv is (..., 2), inv_depth broadcastable to (...,). The returned points
        have z = 1 / inv_depth.
        """
        uv = np.asarray(uv, dtype=np.float64)
        z = 1.0 / np.asarray(inv_depth, dtype=np.float64)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        return np.stack([x * z, y * z, np.broadcast_to(z, x.shape).copy()], axis=-1)

    def project(self, points):
        """Camera-frame points -> (uv, z). Callers must check z > 0 themselves."""
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * points[..., 0] / z + self.cx
            v = self.fy * points[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z
