"""Serial-arm kinematics: DH forward kinematics, geometric Jacobian and
iteratively relinearized inverse kinematics.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _core
from .geometry import Pose, exp_so3, log_so3, twist_error


class KinematicsError(Exception):
    """Base class for kinematics failures."""


class NoConvergence(KinematicsError):
    def __init__(self, message: str, residual: float = float("nan"), step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class SingularJacobian(KinematicsError):
    def __init__(self, message: str, sigma_min: float = 0.0, step: int | None = None):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.step = step


class JointLimitError(KinematicsError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


SINGULAR_SV = 1e-8
IK_DAMPING = 1e-10

# UR10 standard DH rows: (a, alpha, d, theta_offset)
UR10_DH = (
    (0.0, np.pi / 2, 0.1273, 0.0),
    (-0.612, 0.0, 0.0, 0.0),
    (-0.5723, 0.0, 0.0, 0.0),
    (0.0, np.pi / 2, 0.163941, 0.0),
    (0.0, -np.pi / 2, 0.1157, 0.0),
    (0.0, 0.0, 0.0922, 0.0),
)

# Flange z points down at the working configuration; flipping about x makes a
# downward-pointing tool read as the identity orientation.
FLIP_X = np.diag([1.0, -1.0, -1.0, 1.0])


@dataclass(frozen=True)
class ArmModel:
    """Immutable DH arm description.

    ``dh`` rows are ``(a, alpha, d, theta_offset)``; ``tool`` is the fixed
    flange-to-TCP transform and ``base`` places the arm in the world.
    """

    dh: np.ndarray
    joint_limits: np.ndarray
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    base: np.ndarray = field(default_factory=lambda: np.eye(4))
    q_weights: np.ndarray | None = None

    def __post_init__(self):
        dh = np.ascontiguousarray(np.asarray(self.dh, dtype=float).reshape(-1, 4))
        lim = np.asarray(self.joint_limits, dtype=float).reshape(-1, 2)
        if dh.shape[0] != lim.shape[0]:
            raise ValueError("dh rows and joint_limits must have the same length")
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise ValueError("joint limit lo must be < hi")
        if np.any(lim < -np.pi - 1e-12) or np.any(lim > np.pi + 1e-12):
            raise ValueError("joint limits must lie within [-pi, pi]")
        w = np.ones(dh.shape[0]) if self.q_weights is None else np.asarray(self.q_weights, float)
        if w.shape != (dh.shape[0],) or np.any(w <= 0):
            raise ValueError("q_weights must be positive, one per joint")
        for name, val in (("dh", dh), ("joint_limits", lim), ("q_weights", w)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        for name in ("tool", "base"):
            m = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_joints(self) -> int:
        return self.dh.shape[0]

    @classmethod
    def from_config(cls, section: dict) -> "ArmModel":
        tool = section.get("tool")
        base = section.get("base")
        return cls(
            dh=np.asarray(section["dh"], dtype=float),
            joint_limits=np.asarray(section["joint_limits"], dtype=float),
            tool=FLIP_X if tool is None else np.asarray(tool, dtype=float),
            base=np.eye(4) if base is None else np.asarray(base, dtype=float),
            q_weights=section.get("q_weights"),
        )


def reference_arm() -> ArmModel:
    """UR10-like 6-DOF arm whose TCP reads zero rotation when pointing down."""
    return ArmModel(
        dh=np.array(UR10_DH),
        joint_limits=np.tile([-np.pi, np.pi], (6, 1)),
        tool=FLIP_X,
    )


# Working configuration of the reference arm: TCP pointing down above the board.
REFERENCE_HOME_Q = np.array([0.0, -1.2, 1.6, -1.971592653589793, -1.5707963267948966, 0.0])


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray


@dataclass
class JointTrajectory:
    """Uniformly timed joint positions and velocities."""

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.qd = np.atleast_2d(np.asarray(self.qd, dtype=float))
        if len(self.times) > 1:
            d = np.diff(self.times)
            if np.any(d <= 0):
                raise ValueError("trajectory times must be strictly increasing")
            if np.max(np.abs(d - d[0])) > 1e-9:
                raise ValueError("trajectory times must be uniformly spaced")

    def __len__(self) -> int:
        return len(self.times)

    def state(self, k: int) -> JointState:
        return JointState(self.q[k].copy(), self.qd[k].copy())

    def write_csv(self, path) -> None:
        n = self.q.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"q{i + 1}" for i in range(n)] + [f"qd{i + 1}" for i in range(n)])
            for t, q, qd in zip(self.times, self.q, self.qd):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in q] + [repr(float(v)) for v in qd])

    @classmethod
    def read_csv(cls, path) -> "JointTrajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))
        n = (data.shape[1] - 1) // 2
        return cls(data[:, 0], data[:, 1 : 1 + n], data[:, 1 + n :])


def _check_q(model: ArmModel, q) -> np.ndarray:
    q = np.ascontiguousarray(np.asarray(q, dtype=float).ravel())
    if q.shape[0] != model.n_joints:
        raise ValueError(f"expected {model.n_joints} joint positions, got {q.shape[0]}")
    return q


def frames(model: ArmModel, q) -> np.ndarray:
    """World frames: base, after each joint, and the TCP (shape ``(n + 2, 4, 4)``)."""
    return _core.dh_frames(model.dh, _check_q(model, q), model.base, model.tool)


def fk_matrix(model: ArmModel, q) -> np.ndarray:
    return frames(model, q)[-1]


def forward_kinematics(model: ArmModel, q) -> Pose:
    M = fk_matrix(model, q)
    return Pose(M[:3, 3], log_so3(M[:3, :3]))


def jacobian(model: ArmModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x n), rows ``[linear; angular]`` in the world frame."""
    F = frames(model, q)
    n = model.n_joints
    p_end = F[-1][:3, 3]
    J = np.empty((6, n))
    for i in range(n):
        z = F[i][:3, 2]
        J[:3, i] = np.cross(z, p_end - F[i][:3, 3])
        J[3:, i] = z
    return J


def smallest_singular_value(J: np.ndarray) -> float:
    return float(np.linalg.svd(J, compute_uv=False)[-1])


def _residuals(err: np.ndarray) -> tuple[float, float]:
    return float(np.linalg.norm(err[:3])), float(np.linalg.norm(err[3:]))


def ik_solve(
    model: ArmModel,
    q_prev,
    x_target: Pose,
    tol: float = 1e-6,
    max_iters: int = 20,
    tol_r: float | None = None,
    return_iterations: bool = False,
):
    """Joint positions near ``q_prev`` whose TCP pose is ``x_target``.

    Each iteration linearizes the forward kinematics at the current iterate and
    solves ``min ||q - q_prev||_Q^2`` subject to the linearized constraint in
    closed form. Translation and rotation residuals are checked separately
    against ``tol`` (m) and ``tol_r`` (rad, defaults to ``tol``).
    """
    q_prev = _check_q(model, q_prev)
    tol_r = tol if tol_r is None else tol_r
    Qw = np.diag(model.q_weights)
    q = q_prev.copy()
    iters = 0
    while True:
        err = twist_error(x_target, forward_kinematics(model, q))
        rt, rr = _residuals(err)
        if rt < tol and rr < tol_r:
            break
        if iters >= max_iters:
            raise NoConvergence(
                f"IK residual {rt:.3e} m / {rr:.3e} rad after {iters} iterations", residual=rt
            )
        J = jacobian(model, q)
        smin = smallest_singular_value(J)
        if smin < SINGULAR_SV:
            raise SingularJacobian(f"Jacobian singular (sigma_min={smin:.3e})", sigma_min=smin)
        # least-norm step from q_prev onto J q = J q_i + err, damped normal equations
        rhs = J @ (q - q_prev) + err
        H = J.T @ J + IK_DAMPING * Qw
        q = q_prev + np.linalg.solve(H, J.T @ rhs)
        iters += 1
        if not np.all(np.isfinite(q)):
            raise NoConvergence("IK diverged", residual=float("inf"))
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    if np.any(q < lo) or np.any(q > hi):
        raise JointLimitError("IK solution violates joint limits")
    return (q, iters) if return_iterations else q


def joint_velocities(model: ArmModel, q, x_vel) -> np.ndarray:
    """Joint velocities reproducing the Cartesian twist ``x_vel`` (``J qd = x_vel``)."""
    J = jacobian(model, q)
    x_vel = np.asarray(x_vel, dtype=float).ravel()
    smin = smallest_singular_value(J)
    if smin < SINGULAR_SV:
        raise SingularJacobian(f"Jacobian singular (sigma_min={smin:.3e})", sigma_min=smin)
    if not np.any(x_vel):
        return np.zeros(model.n_joints)
    if J.shape[0] == J.shape[1]:
        return np.linalg.solve(J, x_vel)
    return np.linalg.lstsq(J, x_vel, rcond=None)[0]


def cartesian_to_joint_trajectory(
    model: ArmModel,
    xs,
    q_start,
    tol: float = 1e-6,
    max_iters: int = 20,
) -> JointTrajectory:
    """Convert a Cartesian trajectory into joints by warm-started sequential IK.

    ``xs`` must expose ``times``, ``poses`` (sequence of :class:`Pose`) and
    ``vel`` (``(N, 6)`` twists). Errors are re-raised with the offending step.
    """
    q = _check_q(model, q_start)
    poses: Sequence[Pose] = xs.poses
    N = len(poses)
    Q = np.empty((N, model.n_joints))
    QD = np.empty((N, model.n_joints))
    for k in range(N):
        try:
            q = ik_solve(model, q, poses[k], tol=tol, max_iters=max_iters)
            QD[k] = joint_velocities(model, q, xs.vel[k])
        except NoConvergence as exc:
            raise NoConvergence(f"step {k}: {exc}", residual=exc.residual, step=k) from exc
        except SingularJacobian as exc:
            raise SingularJacobian(f"step {k}: {exc}", sigma_min=exc.sigma_min, step=k) from exc
        except JointLimitError as exc:
            raise JointLimitError(f"step {k}: {exc}", step=k) from exc
        Q[k] = q
    return JointTrajectory(np.asarray(xs.times, dtype=float), Q, QD)


def rotation_matrix(pose: Pose) -> np.ndarray:
    return exp_so3(pose.r)
