"""Safe insertion agent: the finite state machine that sequences alignment,
insertion, collision-triggered lifting, retries and termination.

The agent is driven once per control tick with the latest observation and
answers with its state, an optional new Cartesian reference and a list of
events for the caller (``request_goal`` after a completed lift, ``release``
on success).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose


class SiaState(str, Enum):
    INIT = "Init"
    ALIGNMENT = "Alignment"
    INSERTION = "Insertion"
    SAFE = "Safe"
    RELEASED = "Released"
    FAILED = "Failed"


S = SiaState
TRANSITIONS = frozenset(
    {
        (S.INIT, S.ALIGNMENT),
        (S.ALIGNMENT, S.INSERTION),
        (S.INSERTION, S.SAFE),
        (S.SAFE, S.INSERTION),
        (S.INSERTION, S.RELEASED),
        (S.INSERTION, S.FAILED),
        (S.SAFE, S.FAILED),
    }
)
TERMINAL = frozenset({S.RELEASED, S.FAILED})

SUCCESS = "Success"
FAIL = "Fail"
INFEASIBLE = "Infeasible"


class InvalidTransition(Exception):
    pass


@dataclass(frozen=True)
class SiaParams:
    dz: float = 0.015
    force_threshold: float = 2.0
    max_failures: int = 20
    success_prob_threshold: float = 0.05
    xy_tolerance: float = 1e-4
    reach_tolerance: float = 1e-4
    fast_bound_scale: float = 5.0

    def __post_init__(self):
        if not self.dz > 0:
            raise ValueError("dz must be positive")
        if not self.force_threshold > 0:
            raise ValueError("force_threshold must be positive")
        if int(self.max_failures) != self.max_failures or self.max_failures < 1:
            raise ValueError("max_failures must be a positive integer")
        object.__setattr__(self, "max_failures", int(self.max_failures))


@dataclass
class EpisodeStats:
    t_insert: float = 0.0
    collisions: int = 0
    max_force: float = 0.0
    attempts: int = 1
    outcome: str | None = None
    t_comp: float = 0.0
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class Observation:
    pose: Pose
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal_update: Pose | None = None
    trigger: bool = False
    trajectory_done: bool = True


@dataclass(frozen=True)
class StepResult:
    state: SiaState
    reference: Pose | None = None
    motion: str | None = None  # "fast" for alignment and lifts, "precise" for insertion
    events: tuple = ()


class SafeInsertionAgent:
    """One agent per episode. ``goal`` is the current insertion goal x̂*."""

    def __init__(self, params: SiaParams, goal: Pose, tick: float = 0.1):
        self.params = params
        self.goal = goal
        self.tick_period = tick
        self.state = S.INIT
        self.stats = EpisodeStats()
        self.reference: Pose | None = None
        self.collision_pose: Pose | None = None
        self.tick = 0
        self.log: list[dict] = []
        self._descending = False
        self._awaiting_goal = False

    # -- helpers -----------------------------------------------------------
    def alignment_pose(self, goal: Pose | None = None) -> Pose:
        return (goal or self.goal).offset(dz=self.params.dz)

    def _reached(self, obs: Observation, target: Pose) -> bool:
        err = np.abs(obs.pose.t - target.t)
        return bool(obs.trajectory_done and np.all(err <= self.params.reach_tolerance))

    def _record(self, obs: Observation | None, reason: str, src=None, dst=None, reference=None):
        entry = {
            "tick": self.tick,
            "state": self.state.value,
            "reference": None if reference is None else reference.to_list(),
            "force": None if obs is None else [float(v) for v in obs.force],
            "reason": reason,
        }
        if src is not None:
            entry["from"] = src.value
            entry["to"] = dst.value
        self.log.append(entry)

    def _transition(self, dst: SiaState, obs: Observation | None, reason: str, reference=None):
        src = self.state
        if (src, dst) not in TRANSITIONS:
            raise InvalidTransition(f"{src.value} -> {dst.value} ({reason})")
        self.state = dst
        if src is S.INSERTION and dst is S.SAFE:
            self.stats.collisions += 1
        elif src is S.SAFE and dst is S.INSERTION:
            self.stats.attempts += 1
        self._record(obs, reason, src, dst, reference)

    def _emit(self, ref: Pose, motion: str, events=()) -> StepResult:
        self.reference = ref
        return StepResult(self.state, ref, motion, tuple(events))

    # -- main loop ---------------------------------------------------------
    def step(self, obs: Observation) -> StepResult:
        """Advance one control tick."""
        force = float(np.linalg.norm(obs.force))
        if self.state is S.INSERTION:
            self.stats.t_insert += self.tick_period
            self.stats.max_force = max(self.stats.max_force, force)
        elif self.state is S.SAFE:
            self.stats.max_force = max(self.stats.max_force, force)
        try:
            return self._step(obs, force)
        finally:
            self.tick += 1

    def _step(self, obs: Observation, force: float) -> StepResult:
        p = self.params
        st = self.state
        if obs.goal_update is not None and st is not S.SAFE:
            raise InvalidTransition(f"goal update received in {st.value}")

        if st is S.INIT:
            if obs.trigger:
                ref = self.alignment_pose()
                self._transition(S.ALIGNMENT, obs, "trigger", ref)
                return self._emit(ref, "fast")
            return StepResult(st)

        if st is S.ALIGNMENT:
            if force > p.force_threshold:
                raise InvalidTransition("collision during Alignment")
            if self._reached(obs, self.reference):
                self._descending = True
                self._transition(S.INSERTION, obs, "goal reached", self.goal)
                return self._emit(self.goal, "precise")
            return StepResult(st)

        if st is S.INSERTION:
            if force > p.force_threshold:
                self.collision_pose = obs.pose
                lift = obs.pose.offset(dz=p.dz)
                self._descending = False
                self._transition(S.SAFE, obs, f"collision {force:.3f} N", lift)
                return self._emit(lift, "fast")
            if not self._reached(obs, self.reference):
                return StepResult(st)
            if self._descending:
                xy_err = np.abs(obs.pose.t[:2] - self.goal.t[:2])
                if np.all(xy_err <= p.xy_tolerance):
                    self.stats.outcome = SUCCESS
                    self._transition(S.RELEASED, obs, "release")
                    return StepResult(self.state, None, None, ("release",))
                return StepResult(st)
            # realigned above the new goal: descend
            self._descending = True
            self._record(obs, "descend", reference=self.goal)
            return self._emit(self.goal, "precise")

        if st is S.SAFE:
            if obs.goal_update is not None:
                if not self._awaiting_goal:
                    raise InvalidTransition("goal update before the lift completed")
                self._awaiting_goal = False
                self.goal = obs.goal_update
                ref = self.alignment_pose()
                self._transition(S.INSERTION, obs, "goal updated", ref)
                return self._emit(ref, "fast")
            if not self._awaiting_goal and self._reached(obs, self.reference):
                self._awaiting_goal = True
                self._record(obs, "lifted")
                return StepResult(st, None, None, ("request_goal",))
            return StepResult(st)

        return StepResult(st)

    def should_terminate(self, belief_max_prob: float) -> str | None:
        """Called after each failed attempt: ``Fail`` or ``None`` to continue."""
        if self.stats.attempts >= self.params.max_failures:
            return FAIL
        if belief_max_prob < self.params.success_prob_threshold:
            return FAIL
        return None

    def fail(self, reason: str) -> None:
        """Enter Failed from Insertion or Safe."""
        self.stats.outcome = FAIL
        self.stats.reason = reason
        self._transition(S.FAILED, None, reason)

    def abort(self, outcome: str, reason: str) -> None:
        """End the episode without a state transition (planning failure or timeout)."""
        self.stats.outcome = outcome
        self.stats.reason = reason
        self._record(None, f"abort: {reason}")

    @property
    def done(self) -> bool:
        return self.state in TERMINAL or self.stats.outcome is not None

    def write_log(self, path) -> None:
        write_event_log(self.log, path)


def write_event_log(log: list[dict], path) -> None:
    with open(path, "w") as fh:
        for e in log:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def read_event_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class CheckReport:
    illegal: list
    collisions: int
    attempts: int

    @property
    def ok(self) -> bool:
        return not self.illegal


def check_log(log: list[dict], stats: EpisodeStats | None = None) -> CheckReport:
    """Replay a transition log against the transition table.

    Returns the illegal edges found; with ``stats`` also verifies that the
    collision and attempt counts match the logged transitions.
    """
    illegal = []
    state = S.INIT
    collisions = 0
    attempts = 1
    for e in log:
        if "from" not in e:
            continue
        src, dst = SiaState(e["from"]), SiaState(e["to"])
        if src is not state or (src, dst) not in TRANSITIONS:
            illegal.append((e["tick"], src.value, dst.value))
        if (src, dst) == (S.INSERTION, S.SAFE):
            collisions += 1
        if (src, dst) == (S.SAFE, S.INSERTION):
            attempts += 1
        state = dst
    if stats is not None:
        if stats.collisions != collisions:
            illegal.append(("collisions", stats.collisions, collisions))
        if stats.attempts != attempts:
            illegal.append(("attempts", stats.attempts, attempts))
    return CheckReport(illegal, collisions, attempts)
