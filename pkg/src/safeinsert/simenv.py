"""Deterministic kinematic insertion environment.

A component with a grid of pins is carried by the arm's TCP above a board with
matching holes. Joint trajectories are replayed step by step; whenever the TCP
plane is below the board surface at a pose where the pins do not fit their
holes, a quasi-static spring force ``k_c * depth`` (capped) pushes back. The
arm performs a protective stop at the first step where that force exceeds the
collision threshold while still moving deeper.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Pose
from .kinematics import (
    REFERENCE_HOME_Q,
    ArmModel,
    JointTrajectory,
    forward_kinematics,
    ik_solve,
    jacobian,
)
from .occt import CartesianTrajectory
from .pim import ComponentSpec, DefectModel, feasible
from .sia import FAIL, INFEASIBLE, EpisodeStats


@dataclass(frozen=True)
class EnvConfig:
    pin_grid: tuple[int, int] = (2, 4)
    pin_pitch: float = 0.00254
    pin_radius: float = 0.0003
    hole_radius: float = 0.0005
    nominal_goal: tuple[float, float, float] = (-0.865, -0.164, 0.34)
    goal_spread: float = 0.005
    insertion_depth: float = 0.002
    start_height: float = 0.03
    defect_prob: float = 0.15
    bend_std: float = 0.00015
    bend_max: float = 0.00045
    noise_x: float = 0.0001
    noise_y: float = 0.0001
    perception_bias: tuple[float, float] = (0.0, 0.0)
    k_c: float = 2000.0
    f_cap: float = 20.0
    collision_threshold: float = 2.0
    tick: float = 0.1
    delay_ticks: int = 1
    max_episode_time: float = 120.0
    synthetic_tcomp: bool = True
    tcomp_coeff: float = 2e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pin_grid", tuple(int(v) for v in self.pin_grid))
        object.__setattr__(self, "nominal_goal", tuple(float(v) for v in self.nominal_goal))
        object.__setattr__(self, "perception_bias", tuple(float(v) for v in self.perception_bias))
        if not self.pin_radius < self.hole_radius:
            raise ValueError("pin_radius must be smaller than hole_radius")
        if not 0.0 <= self.defect_prob <= 1.0:
            raise ValueError("defect_prob must be a probability")
        if min(self.noise_x, self.noise_y, self.goal_spread) < 0:
            raise ValueError("noise and spread must be non-negative")
        if not (self.k_c > 0 and self.f_cap > 0 and self.tick > 0):
            raise ValueError("k_c, f_cap and tick must be positive")
        if int(self.delay_ticks) != self.delay_ticks or self.delay_ticks < 0:
            raise ValueError("delay_ticks must be a non-negative integer")

    @property
    def defect_model(self) -> DefectModel:
        return DefectModel(self.defect_prob, self.bend_std, self.bend_max)

    def nominal_spec(self) -> ComponentSpec:
        return ComponentSpec(self.pin_grid, self.pin_pitch, self.pin_radius, self.hole_radius)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class BoardModel:
    hole_centers: np.ndarray
    hole_radius: float
    surface_z: float

    @classmethod
    def for_task(cls, spec: ComponentSpec, true_goal: Pose, depth: float) -> "BoardModel":
        centers = true_goal.t[:2] + spec.pin_positions()
        return cls(centers, spec.hole_radius, float(true_goal.t[2] + depth))


@dataclass(frozen=True)
class TaskInstance:
    spec: ComponentSpec
    true_goal: Pose
    perceived_goal: Pose
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "true_goal": self.true_goal.to_list(),
            "perceived_goal": self.perceived_goal.to_list(),
            "pin_grid": list(self.spec.pin_grid),
            "pin_pitch": self.spec.pin_pitch,
            "pin_radius": self.spec.pin_radius,
            "hole_radius": self.spec.hole_radius,
            "defect_offsets": self.spec.defect_offsets.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def has_defect(self) -> bool:
        return bool(np.any(self.spec.defect_offsets))

    def feasible_at(self, pose: Pose) -> bool:
        return feasible(self.spec, pose, self.true_goal)


def sample_task(config: EnvConfig, seed: int) -> TaskInstance:
    """Seeded draw of (defects, true goal, perceived goal)."""
    rng = np.random.default_rng(seed)
    base = config.nominal_spec()
    defects = config.defect_model.sample(rng, 1, base.n_pins)[0]
    gx, gy, gz = config.nominal_goal
    spread = rng.uniform(-config.goal_spread, config.goal_spread, 2)
    true_goal = Pose.from_xyz(gx + spread[0], gy + spread[1], gz)
    noise = rng.standard_normal(2) * np.array([config.noise_x, config.noise_y])
    noise = noise + np.array(config.perception_bias)
    perceived = true_goal.offset(noise[0], noise[1], 0.0)
    return TaskInstance(base.with_defects(defects), true_goal, perceived, int(seed))


@dataclass(frozen=True)
class ContactReading:
    force: np.ndarray
    in_contact: bool
    depth: float = 0.0

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.force))


NO_CONTACT = ContactReading(np.zeros(3), False, 0.0)


def reward_occt(stats: EpisodeStats) -> float:
    """Cost (negated reward) of an OCCT/SIA episode."""
    infeas = 1.0 if stats.outcome == INFEASIBLE else 0.0
    fail = 1.0 if stats.outcome == FAIL else 0.0
    R = -stats.t_insert**2 - 10.0 * stats.collisions - 0.1 * stats.max_force - 100.0 * infeas - 100.0 * fail
    return -R


def reward_pim(fail: bool, attempts: float, t_comp: float) -> float:
    """Cost (negated reward) of a goal-inference task."""
    R = -100.0 * float(bool(fail)) - 2.0 * attempts - t_comp
    return -R


class SimEnv:
    """Single-owner simulation of one task on one arm."""

    def __init__(self, model: ArmModel, task: TaskInstance, config: EnvConfig, q0=None):
        self.model = model
        self.task = task
        self.config = config
        self.board = BoardModel.for_task(task.spec, task.true_goal, config.insertion_depth)
        if q0 is None:
            q0 = home_configuration(model, task.perceived_goal.offset(dz=config.start_height))
        self.q = np.asarray(q0, dtype=float).copy()
        self.qd = np.zeros(model.n_joints)
        self.time = 0.0
        self.traj: JointTrajectory | None = None
        self.traj_start = 0.0
        self.cursor = 0
        self.halted = False
        self.reading = self.contact(self.pose())
        self.log_t: list[float] = [0.0]
        self.log_q: list[np.ndarray] = [self.q.copy()]
        self.log_qd: list[np.ndarray] = [self.qd.copy()]

    # -- contact -----------------------------------------------------------
    def contact(self, pose: Pose) -> ContactReading:
        depth = self.board.surface_z - float(pose.t[2])
        if depth <= 0.0 or feasible(self.task.spec, pose, self.task.true_goal):
            return NO_CONTACT
        f = min(self.config.k_c * depth, self.config.f_cap)
        return ContactReading(np.array([0.0, 0.0, f]), True, depth)

    def pose(self) -> Pose:
        return forward_kinematics(self.model, self.q)

    # -- trajectory execution ----------------------------------------------
    def load(self, traj: JointTrajectory, t_start: float | None = None) -> None:
        if np.max(np.abs(traj.q[0] - self.q)) > 1e-9:
            raise ValueError("trajectory must start at the current joint state")
        self.traj = traj
        self.traj_start = self.time if t_start is None else t_start
        self.cursor = 1
        self.halted = False

    @property
    def trajectory_done(self) -> bool:
        return self.traj is None or self.cursor >= len(self.traj)

    def _step_to(self, k: int) -> bool:
        """Move to step ``k`` of the active trajectory; False on protective stop."""
        q = self.traj.q[k]
        pose = forward_kinematics(self.model, q)
        reading = self.contact(pose)
        deeper = reading.depth > self.reading.depth
        self.q = q.copy()
        self.qd = self.traj.qd[k].copy()
        self.reading = reading
        self.time = max(self.time, self.traj_start + float(self.traj.times[k]))
        self.log_t.append(self.time)
        self.log_q.append(self.q.copy())
        if reading.magnitude > self.config.collision_threshold and deeper:
            self.qd = np.zeros_like(self.qd)
            self.log_qd.append(self.qd.copy())
            self.halted = True
            self.traj = None
            return False
        self.log_qd.append(self.qd.copy())
        return True

    def advance_to(self, t: float) -> None:
        """Execute every trajectory step scheduled at or before time ``t``."""
        while not self.trajectory_done:
            ts = self.traj_start + float(self.traj.times[self.cursor])
            if ts > t + 1e-9:
                break
            k = self.cursor
            self.cursor += 1
            if not self._step_to(k):
                break
        if self.trajectory_done:
            self.qd = np.zeros_like(self.qd)
        self.time = max(self.time, t)

    def execute(self, traj: JointTrajectory):
        """Replay a whole trajectory from the current state.

        Returns the executed Cartesian trajectory, one contact reading per
        executed step, and the index of the halting step (or ``None``).
        """
        self.load(traj)
        times, pos, vel, readings = [], [], [], []
        halted_at = None
        first = self.pose()
        times.append(float(traj.times[0]))
        pos.append(first.vector())
        vel.append(jacobian(self.model, self.q) @ traj.qd[0])
        readings.append(self.reading)
        for k in range(1, len(traj)):
            self.cursor = k + 1
            ok = self._step_to(k)
            times.append(float(traj.times[k]))
            pos.append(self.pose().vector())
            vel.append(jacobian(self.model, self.q) @ self.qd)
            readings.append(self.reading)
            if not ok:
                halted_at = k
                break
        times = np.array(times)
        vel = np.array(vel)
        acc = np.zeros_like(vel)
        if len(times) > 1:
            acc[:-1] = np.diff(vel, axis=0) / np.diff(times)[:, None]
        return CartesianTrajectory(times, np.array(pos), vel, acc), readings, halted_at

    def velocity(self) -> np.ndarray:
        if self.trajectory_done:
            return np.zeros(6)
        return jacobian(self.model, self.q) @ self.qd

    def inject_offset(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> None:
        """Fault injection: displace the arm without informing the planner."""
        self.q = ik_solve(self.model, self.q, self.pose().offset(dx, dy, dz))

    def executed_trajectory(self) -> JointTrajectory:
        t = np.array(self.log_t)
        # protective stops and replans can repeat a timestamp; keep the last sample
        keep = np.append(np.diff(t) > 1e-12, True)
        return _Log(t[keep], np.array(self.log_q)[keep], np.array(self.log_qd)[keep])


@dataclass
class _Log:
    """Executed joint log; timestamps follow the control ticks and need not be uniform."""

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    write_csv = JointTrajectory.write_csv


def home_configuration(model: ArmModel, pose: Pose, q_seed=None) -> np.ndarray:
    """Joint configuration placing the TCP at ``pose``, reached from the working seed."""
    q = REFERENCE_HOME_Q if q_seed is None else np.asarray(q_seed, dtype=float)
    start = forward_kinematics(model, q)
    # walk in short steps so every IK solve starts close to its target
    n = max(1, int(np.ceil(np.linalg.norm(pose.t - start.t) / 0.005)))
    for i in range(1, n + 1):
        s = i / n
        p = Pose(start.t + s * (pose.t - start.t), start.r + s * (pose.r - start.r))
        q = ik_solve(model, q, p, max_iters=50)
    return q
