"""Poses, rigid transforms and the error transform used for static-reference tracking.

A :class:`Pose` is ``[tx, ty, tz, rx, ry, rz]``: a translation in meters and an
angle-axis rotation vector in radians. A :class:`Transform` is the equivalent
rotation-matrix form. Conversions go through the closed-form exponential and
logarithm maps of SO(3).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _canonical_near_pi(r: np.ndarray) -> np.ndarray:
    # r and -r describe the same rotation at |r| = pi; keep the one whose
    # leading nonzero component is positive.
    for c in r:
        if abs(c) > 1e-12:
            return r if c > 0 else -r
    return r


def canonical_rotvec(r) -> np.ndarray:
    """Map a rotation vector to its equivalent representative with norm in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta <= np.pi:
        if np.pi - theta < 1e-12:
            return _canonical_near_pi(r.copy())
        return r.copy()
    axis = r / theta
    theta = np.mod(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta -= 2.0 * np.pi
    out = axis * theta
    if np.pi - abs(theta) < 1e-12:
        out = _canonical_near_pi(out)
    return out


def exp_so3(r) -> np.ndarray:
    """Rotation matrix of a rotation vector (Rodrigues)."""
    r = np.asarray(r, dtype=float)
    theta2 = float(r @ r)
    K = skew(r)
    if theta2 < _SMALL_ANGLE**2:
        # series: sin(t)/t ~ 1 - t^2/6, (1 - cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R) -> np.ndarray:
    """Rotation vector of a rotation matrix, canonical with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_t = (np.trace(R) - 1.0) / 2.0
    cos_t = min(1.0, max(-1.0, cos_t))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_t = 0.5 * float(np.linalg.norm(w))
    # atan2 keeps full precision at both ends, unlike arccos
    theta = float(np.arctan2(sin_t, cos_t))
    if theta < _SMALL_ANGLE:
        return 0.5 * w * (1.0 + theta * theta / 6.0)
    if np.pi - theta > 1e-6:
        return theta / (2.0 * sin_t) * w
    # near pi: axis from the symmetric part, sign fixed by the skew part
    B = (R + R.T) / 2.0 - cos_t * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    # refine angle with atan2 for accuracy close to pi
    theta = float(np.arctan2(0.5 * (axis @ w), cos_t))
    return canonical_rotvec(axis * theta)


@dataclass(frozen=True)
class Transform:
    """Homogeneous rigid transform with rotation ``R`` and translation ``t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Transform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3].copy(), M[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Transform":
        return Transform(self.R.T.copy(), -self.R.T @ self.t)

    def is_valid(self, tol: float = 1e-10) -> bool:
        R = self.R
        return (
            np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


@dataclass(frozen=True)
class Pose:
    """6-D Cartesian pose: translation ``t`` (m) and rotation vector ``r`` (rad)."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "t", np.array(self.t, dtype=float).reshape(3))
        object.__setattr__(self, "r", canonical_rotvec(np.array(self.r, dtype=float).reshape(3)))

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def from_xyz(cls, x: float, y: float, z: float) -> "Pose":
        return cls(np.array([x, y, z]), np.zeros(3))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    def to_list(self) -> list[float]:
        return [float(v) for v in self.vector()]

    def offset(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Pose":
        return Pose(self.t + np.array([dx, dy, dz]), self.r)


def to_transform(p: Pose) -> Transform:
    return Transform(exp_so3(p.r), p.t.copy())


def from_transform(T: Transform) -> Pose:
    return Pose(T.t.copy(), log_so3(T.R))


def identity() -> Transform:
    return Transform()


def translate(x: float, y: float, z: float) -> Transform:
    return Transform(np.eye(3), np.array([x, y, z], dtype=float))


def rot_z(angle: float) -> Transform:
    c, s = np.cos(angle), np.sin(angle)
    return Transform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3))


def compose(a: Transform, b: Transform) -> Transform:
    """Matrix product ``a @ b``."""
    return Transform(a.R @ b.R, a.R @ b.t + a.t)


def pose_error(p1: Pose, p0: Pose) -> Pose:
    """World-frame transform taking ``p0`` to ``p1``: ``T(err) T(p0) = T(p1)``."""
    T1, T0 = to_transform(p1), to_transform(p0)
    return from_transform(compose(T1, T0.inverse()))


def apply_error_on_reference(err: Pose, ref: Pose) -> Pose:
    """Pose whose transform is ``T(err) T(ref)``."""
    return from_transform(compose(to_transform(err), to_transform(ref)))


def twist_error(target: Pose, current: Pose) -> np.ndarray:
    """6-vector ``[t_target - t_current, log(R_target R_current^T)]`` used as IK residual."""
    Rt, Rc = exp_so3(target.r), exp_so3(current.r)
    return np.concatenate([target.t - current.t, log_so3(Rt @ Rc.T)])
