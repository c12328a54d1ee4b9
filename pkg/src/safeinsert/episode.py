"""Episode drivers.

``run_episode`` closes the full loop: the agent emits references at the
control tick, the tracker plans joint trajectories one tick later, the
environment executes them and reports pose and force, and the retry policy
proposes a new goal after each failed attempt.

``run_abstract_task`` is the fast loop used to benchmark and tune the retry
policy: attempts are judged directly by the feasibility ground truth with no
trajectory execution.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .kinematics import ArmModel, KinematicsError
from .occt import Infeasible, OcctParams, Tracker
from .pim import (
    BeliefCollapse,
    PimParams,
    condition_on_failure,
    infer_goal,
    init_belief,
    random_retry_goal,
    synthetic_tcomp,
)
from .sia import (
    FAIL,
    INFEASIBLE,
    EpisodeStats,
    Observation,
    SafeInsertionAgent,
    SiaParams,
    SiaState,
)
from .simenv import EnvConfig, SimEnv, TaskInstance

PIM = "pim"
RANDOM = "random"


def _child_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


class RetryPolicy:
    """Proposes the next insertion goal after a failed attempt."""

    def __init__(self, kind: str, pim_params: PimParams, env_config: EnvConfig, task: TaskInstance, seed: int):
        if kind not in (PIM, RANDOM):
            raise ValueError(f"unknown policy {kind!r}")
        self.kind = kind
        self.params = pim_params
        self.env_config = env_config
        self.task = task
        self.seed = seed
        self.belief = None
        self.calls = 0
        self.t_comp = 0.0
        self.rng = np.random.default_rng(_child_seed(seed, 1))

    def next_goal(self, failed_pose: Pose) -> tuple[Pose | None, float, str]:
        """``(goal, max_prob, reason)``; goal is ``None`` when no hypothesis survives."""
        self.calls += 1
        perceived = self.task.perceived_goal
        if self.kind == RANDOM:
            g = random_retry_goal(perceived, self.params.sigma_x, self.params.sigma_y, self.rng)
            return g, 1.0, ""
        t0 = time.perf_counter()
        try:
            if self.belief is None:
                self.belief = init_belief(
                    self.params, perceived, self.env_config.defect_model, _child_seed(self.seed, 2),
                    self.env_config.nominal_spec(),
                )
            self.belief = condition_on_failure(self.belief, failed_pose)
            goal, prob = infer_goal(self.belief, self.params, _child_seed(self.seed, 100 + self.calls))
        except BeliefCollapse:
            return None, 0.0, "belief collapse"
        finally:
            wall = time.perf_counter() - t0
            if self.env_config.synthetic_tcomp:
                self.t_comp += synthetic_tcomp(self.params, self.env_config.tcomp_coeff)
            else:
                self.t_comp += wall
        return goal, prob, ""


@dataclass
class EpisodeResult:
    stats: EpisodeStats
    log: list
    executed: object
    plans: int
    task: TaskInstance

    @property
    def success(self) -> bool:
        return self.stats.outcome == "Success"


@dataclass(frozen=True)
class _Pending:
    tick: int
    reference: Pose
    motion: str


def run_episode(
    task: TaskInstance,
    model: ArmModel,
    occt_params: OcctParams,
    sia_params: SiaParams,
    pim_params: PimParams,
    env_config: EnvConfig,
    seed: int = 0,
    policy: str = PIM,
) -> EpisodeResult:
    env = SimEnv(model, task, env_config)
    tick_s = env_config.tick
    agent = SafeInsertionAgent(sia_params, task.perceived_goal, tick_s)
    fast = occt_params.scaled_bounds(sia_params.fast_bound_scale)
    tracker = Tracker(occt_params, model)
    retry = RetryPolicy(policy, pim_params, env_config, task, seed)
    pending: deque[_Pending] = deque()
    goal_update = None
    max_ticks = int(round(env_config.max_episode_time / tick_s))

    for tick in range(max_ticks + 1):
        now = tick * tick_s
        env.advance_to(now)
        # deliver references that have cleared the communication delay
        while pending and pending[0].tick + env_config.delay_ticks <= tick:
            item = pending.popleft()
            try:
                traj = tracker.refresh(
                    item.reference, env.q, env.pose(), now, env.velocity(),
                    params=fast if item.motion == "fast" else occt_params,
                )
            except Infeasible as exc:
                agent.abort(INFEASIBLE, f"planning: {exc}")
                break
            except KinematicsError as exc:
                agent.abort(INFEASIBLE, f"kinematics: {exc}")
                break
            if traj is not None:
                env.load(traj, now)
        if agent.done:
            break
        if not pending and not env.halted and tracker.reference is not None:
            # drift check against the active plan
            traj = tracker.refresh(tracker.reference, env.q, env.pose(), now, env.velocity())
            if traj is not None:
                env.load(traj, now)

        obs = Observation(
            pose=env.pose(),
            force=env.reading.force,
            goal_update=goal_update,
            trigger=tick == 0,
            trajectory_done=env.trajectory_done and not pending,
        )
        goal_update = None
        res = agent.step(obs)
        if res.reference is not None:
            pending.append(_Pending(tick, res.reference, res.motion))
            env.halted = False
        if "request_goal" in res.events:
            goal, prob, reason = retry.next_goal(agent.collision_pose)
            verdict = agent.should_terminate(prob) if goal is not None else FAIL
            if verdict is not None:
                agent.fail(reason or ("trial cap" if agent.stats.attempts >= sia_params.max_failures
                                      else "low success probability"))
            else:
                goal_update = goal
        if agent.done:
            break
    else:
        if agent.state in (SiaState.INSERTION, SiaState.SAFE):
            agent.fail("timeout")
        else:
            agent.abort(FAIL, "timeout")

    agent.stats.t_comp = retry.t_comp
    return EpisodeResult(agent.stats, agent.log, env.executed_trajectory(), tracker.replans, task)


@dataclass
class TaskOutcome:
    success: bool
    attempts: int
    t_comp: float
    reason: str = ""
    goals: list = field(default_factory=list)


def run_abstract_task(
    task: TaskInstance,
    pim_params: PimParams,
    env_config: EnvConfig,
    policy: str = PIM,
    max_trials: int = 20,
    success_prob_threshold: float = 0.05,
    seed: int = 0,
) -> TaskOutcome:
    """Attempt at the perceived goal, then retry until success or termination."""
    retry = RetryPolicy(policy, pim_params, env_config, task, seed)
    goal = task.perceived_goal
    attempts = 1
    goals = [goal]
    while True:
        if task.feasible_at(goal):
            return TaskOutcome(True, attempts, retry.t_comp, "", goals)
        if attempts >= max_trials:
            return TaskOutcome(False, attempts, retry.t_comp, "trial cap", goals)
        goal, prob, reason = retry.next_goal(goal)
        if goal is None:
            return TaskOutcome(False, attempts, retry.t_comp, reason, goals)
        if prob < success_prob_threshold:
            return TaskOutcome(False, attempts, retry.t_comp, "low success probability", goals)
        attempts += 1
        goals.append(goal)
