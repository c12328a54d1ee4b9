"""Optimal configurable Cartesian tracker.

Plans a rest-to-rest double-integrator trajectory to a static reference with a
constrained T-step LQR, maps it back to the world frame and converts it to
joints by sequential IK. Orientation is pinned to zero, so the remaining three
translational axes decouple and each is solved as its own small QP.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, apply_error_on_reference, pose_error
from .kinematics import (
    ArmModel,
    JointTrajectory,
    cartesian_to_joint_trajectory,
    joint_velocities,
)
from .qp import INFEASIBLE, kkt_residual, solve_qp

ORIENTATION_TOL = 1e-5


class Infeasible(Exception):
    """The terminal constraint cannot be met under the bounds."""


@dataclass(frozen=True)
class OcctParams:
    v_Q: float = 10.0
    v_S: float = 100.0
    T: int = 10
    dt: float = 0.1
    b_u: float = 0.2
    b_v: float = 0.02
    replan_error_threshold: float = 0.002

    def __post_init__(self):
        if not (self.v_Q > 0 and self.v_S > 0):
            raise ValueError("v_Q and v_S must be positive")
        if int(self.T) != self.T or self.T < 2:
            raise ValueError("T must be an integer >= 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.b_u > 0 and self.b_v > 0):
            raise ValueError("b_u and b_v must be positive")
        object.__setattr__(self, "T", int(self.T))

    @classmethod
    def from_learnable(
        cls, v_Q: float, v_S: float, T_occt: float, inv_dt: float, **kw
    ) -> "OcctParams":
        """Build from horizon time and planning rate; ``T = round(T_occt / dt)``
        clamped so that ``T * dt`` stays in [0.75, 3] s."""
        dt = 1.0 / inv_dt
        T = int(round(T_occt * inv_dt))
        lo = math.ceil(0.75 * inv_dt - 1e-9)
        hi = math.floor(3.0 * inv_dt + 1e-9)
        T = max(2, lo, min(T, hi))
        return cls(v_Q=v_Q, v_S=v_S, T=T, dt=dt, **kw)

    @property
    def horizon(self) -> float:
        return self.T * self.dt

    def scaled_bounds(self, factor: float) -> "OcctParams":
        return replace(self, b_u=self.b_u * factor, b_v=self.b_v * factor)


@dataclass
class CartesianTrajectory:
    """Timed poses ``pos`` (N x 6), twists ``vel`` and accelerations ``acc``."""

    times: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    cost: float = 0.0
    kkt: float = 0.0
    iterations: int = 0
    poses: list = field(init=False, repr=False)

    def __post_init__(self):
        self.poses = [Pose.from_vector(p) for p in self.pos]

    def __len__(self) -> int:
        return len(self.times)

    def write_csv(self, path) -> None:
        axes = ["x", "y", "z", "rx", "ry", "rz"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + axes + [f"v{a}" for a in axes] + [f"a{a}" for a in axes])
            for row in np.column_stack([self.times, self.pos, self.vel, self.acc]):
                w.writerow([repr(float(v)) for v in row])


def axis_matrices(T: int, dt: float):
    """Affine maps from inputs ``u`` (T,) to positions and velocities at k = 0..T.

    ``x_k = x0 + k dt v0 + Mx[k] @ u`` and ``v_k = v0 + Mv[k] @ u``.
    """
    k = np.arange(T + 1)[:, None]
    j = np.arange(T)[None, :]
    Mx = np.where(j < k, dt * dt * (k - j - 0.5), 0.0)
    Mv = np.where(j < k, dt, 0.0)
    return Mx, Mv


def axis_qp(params: OcctParams, x0: float, v0: float):
    """Condensed QP ``(P, q, const, A, l, u)`` for one translational axis."""
    T, dt = params.T, params.dt
    Mx, Mv = axis_matrices(T, dt)
    k = np.arange(T + 1)
    cx = x0 + k * dt * v0
    cv = np.full(T + 1, v0)
    vQ, vS = params.v_Q, params.v_S
    Mr_x, Mr_v = Mx[:T], Mv[:T]
    P = np.eye(T) + vQ * (Mr_x.T @ Mr_x + Mr_v.T @ Mr_v) + vS * (
        np.outer(Mx[T], Mx[T]) + np.outer(Mv[T], Mv[T])
    )
    q = vQ * (Mr_x.T @ cx[:T] + Mr_v.T @ cv[:T]) + vS * (Mx[T] * cx[T] + Mv[T] * cv[T])
    const = 0.5 * vQ * (cx[:T] @ cx[:T] + cv[:T] @ cv[:T]) + 0.5 * vS * (cx[T] ** 2 + cv[T] ** 2)

    rows, lo, hi = [], [], []
    if math.isfinite(params.b_u):
        rows.append(np.eye(T))
        lo.append(np.full(T, -params.b_u))
        hi.append(np.full(T, params.b_u))
    if math.isfinite(params.b_v) and T > 1:
        rows.append(Mv[1:T])
        lo.append(-params.b_v - cv[1:T])
        hi.append(params.b_v - cv[1:T])
    rows.append(np.vstack([Mx[T], Mv[T]]))
    lo.append(np.array([-cx[T], -cv[T]]))
    hi.append(np.array([-cx[T], -cv[T]]))
    A = np.vstack(rows)
    return P, q, const, A, np.concatenate(lo), np.concatenate(hi)


def max_reach(params: OcctParams) -> float:
    """Largest rest-to-rest displacement reachable in T steps under the bounds."""
    T, dt = params.T, params.dt
    k = np.arange(1, T)
    vmax = np.minimum(params.b_v, params.b_u * dt * np.minimum(k, T - k))
    return float(dt * vmax.sum())


def reachability_bound(params: OcctParams) -> float:
    """Necessary condition on the initial error for any initial velocity."""
    return params.b_v * params.T * params.dt + 0.5 * params.b_v**2 / params.b_u


@dataclass
class AxisSolution:
    u: np.ndarray
    x: np.ndarray
    v: np.ndarray
    cost: float
    kkt: float
    iterations: int


def solve_axis(params: OcctParams, x0: float, v0: float = 0.0) -> AxisSolution:
    T, dt = params.T, params.dt
    if x0 == 0.0 and v0 == 0.0:
        z = np.zeros(T + 1)
        return AxisSolution(np.zeros(T), z, z.copy(), 0.0, 0.0, 0)
    if v0 == 0.0:
        if abs(x0) > max_reach(params) * (1.0 + 1e-12):
            raise Infeasible(f"|error| {abs(x0):.6g} m exceeds reach {max_reach(params):.6g} m")
    elif abs(x0) > reachability_bound(params):
        raise Infeasible(f"|error| {abs(x0):.6g} m exceeds reachability bound")
    P, q, const, A, l, u = axis_qp(params, x0, v0)
    res = solve_qp(P, q, A, l, u)
    if res.status == INFEASIBLE:
        raise Infeasible(f"terminal constraint unreachable (residual {res.primal_residual:.3g})")
    Mx, Mv = axis_matrices(T, dt)
    k = np.arange(T + 1)
    x = x0 + k * dt * v0 + Mx @ res.x
    v = v0 + Mv @ res.x
    cost = res.objective(P, q) + const
    return AxisSolution(res.x, x, v, cost, kkt_residual(P, q, A, l, u, res.x, res.y), res.iterations)


def solve_lqr(params: OcctParams, x_err0: Pose, v0=None) -> CartesianTrajectory:
    """Optimal error trajectory from ``x_err0`` to zero, in error coordinates."""
    if np.max(np.abs(x_err0.r)) > ORIENTATION_TOL:
        raise Infeasible("initial orientation error must be zero")
    v0 = np.zeros(6) if v0 is None else np.asarray(v0, dtype=float).ravel()
    if np.max(np.abs(v0[3:])) > ORIENTATION_TOL:
        raise Infeasible("initial angular velocity must be zero")
    T = params.T
    pos = np.zeros((T + 1, 6))
    vel = np.zeros((T + 1, 6))
    acc = np.zeros((T + 1, 6))
    cost = kkt = 0.0
    iters = 0
    for a in range(3):
        sol = solve_axis(params, float(x_err0.t[a]), float(v0[a]))
        pos[:, a] = sol.x
        vel[:, a] = sol.v
        acc[:T, a] = sol.u
        cost += sol.cost
        kkt = max(kkt, sol.kkt)
        iters += sol.iterations
    return CartesianTrajectory(np.arange(T + 1) * params.dt, pos, vel, acc, cost, kkt, iters)


def to_world(err_traj: CartesianTrajectory, x_ref: Pose) -> CartesianTrajectory:
    """Apply each error pose on the reference: ``T(x_k) = T(err_k) T(x_ref)``."""
    pos = np.array([apply_error_on_reference(p, x_ref).vector() for p in err_traj.poses])
    return CartesianTrajectory(
        err_traj.times.copy(), pos, err_traj.vel.copy(), err_traj.acc.copy(),
        err_traj.cost, err_traj.kkt, err_traj.iterations,
    )


def _check_downward(p: Pose, what: str) -> None:
    if np.max(np.abs(p.r)) > ORIENTATION_TOL:
        raise ValueError(f"{what} must have zero orientation (tool pointing down)")


def plan_static_reference(
    params: OcctParams, model: ArmModel, x_current: Pose, x_ref: Pose, q_current, v0=None
) -> tuple[CartesianTrajectory, JointTrajectory]:
    """World-frame Cartesian plan and its joint trajectory, starting at ``q_current``."""
    _check_downward(x_current, "x_current")
    _check_downward(x_ref, "x_ref")
    q_current = np.asarray(q_current, dtype=float)
    v0 = np.zeros(6) if v0 is None else np.asarray(v0, dtype=float)
    err0 = pose_error(x_current, x_ref)
    err0 = Pose(err0.t, np.zeros(3))
    if not np.any(err0.t) and not np.any(v0[:3]):
        pos = np.array([x_current.vector()])
        z = np.zeros((1, 6))
        cart = CartesianTrajectory(np.zeros(1), pos, z, z.copy())
        return cart, JointTrajectory(np.zeros(1), q_current[None, :], np.zeros((1, len(q_current))))
    cart = to_world(solve_lqr(params, err0, v0), x_ref)
    tail = CartesianTrajectory(cart.times[1:], cart.pos[1:], cart.vel[1:], cart.acc[1:])
    jt = cartesian_to_joint_trajectory(model, tail, q_current)
    qd0 = joint_velocities(model, q_current, cart.vel[0])
    joints = JointTrajectory(
        cart.times, np.vstack([q_current, jt.q]), np.vstack([qd0, jt.qd])
    )
    return cart, joints


def track_static_reference(
    params: OcctParams, model: ArmModel, x_current: Pose, x_ref: Pose, q_current, v0=None
) -> JointTrajectory:
    return plan_static_reference(params, model, x_current, x_ref, q_current, v0)[1]


class Tracker:
    """Holds the active reference and plan; replans only when needed.

    Trajectories carry absolute start times so the tracking error can be
    measured against the planned pose at the current time.
    """

    def __init__(self, params: OcctParams, model: ArmModel):
        self.params = params
        self.model = model
        self.reference: Pose | None = None
        self.cartesian: CartesianTrajectory | None = None
        self.joints: JointTrajectory | None = None
        self.start_time = 0.0
        self.replans = 0

    def expected_pose(self, t_now: float) -> Pose | None:
        if self.cartesian is None:
            return None
        n = len(self.cartesian)
        if n == 1:
            return self.cartesian.poses[0]
        dt = self.cartesian.times[1] - self.cartesian.times[0]
        k = int(math.floor((t_now - self.start_time) / dt + 1e-9))
        return self.cartesian.poses[min(max(k, 0), n - 1)]

    def tracking_error(self, x_measured: Pose, t_now: float) -> float:
        p = self.expected_pose(t_now)
        if p is None:
            return 0.0
        return float(np.linalg.norm(x_measured.t - p.t))

    def refresh(
        self,
        x_ref_new: Pose,
        q_measured,
        x_measured: Pose,
        t_now: float = 0.0,
        v_measured=None,
        params: OcctParams | None = None,
    ) -> JointTrajectory | None:
        """New joint trajectory if the reference moved or tracking drifted, else ``None``."""
        changed = self.reference is None or np.max(
            np.abs(x_ref_new.vector() - self.reference.vector())
        ) > 1e-9
        drift = (
            not changed
            and self.tracking_error(x_measured, t_now) > self.params.replan_error_threshold
        )
        if not (changed or drift):
            return None
        cart, joints = plan_static_reference(
            params or self.params, self.model, x_measured, x_ref_new, q_measured, v_measured
        )
        self.reference = x_ref_new
        self.cartesian = cart
        self.joints = joints
        self.start_time = t_now
        self.replans += 1
        return joints
