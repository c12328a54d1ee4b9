"""Probabilistic inference of the insertion goal.

The belief is a weighted sample over (per-pin defect offsets, true goal XY)
hypotheses. A failed attempt at pose ``x`` rules out every hypothesis under
which ``x`` would have been feasible (the contact signal is binary, so this
hard rejection is the exact posterior). The next goal is the XY offset that
maximizes the posterior probability of success, found with CMA-ES.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import _core
from .cmaes import CMAES, EsConfig
from .geometry import Pose


class BeliefCollapse(Exception):
    """No hypothesis is consistent with the failure history."""


@dataclass(frozen=True)
class ComponentSpec:
    pin_grid: tuple[int, int] = (2, 4)
    pin_pitch: float = 0.00254
    pin_radius: float = 0.0003
    hole_radius: float = 0.0005
    defect_offsets: np.ndarray | None = None

    def __post_init__(self):
        if not self.pin_radius < self.hole_radius:
            raise ValueError("pin_radius must be smaller than hole_radius")
        object.__setattr__(self, "pin_grid", tuple(int(v) for v in self.pin_grid))
        d = np.zeros((self.n_pins, 2)) if self.defect_offsets is None else np.asarray(self.defect_offsets, float)
        if d.shape != (self.n_pins, 2):
            raise ValueError(f"defect_offsets must have shape ({self.n_pins}, 2)")
        d = np.ascontiguousarray(d)
        d.setflags(write=False)
        object.__setattr__(self, "defect_offsets", d)

    @property
    def n_pins(self) -> int:
        return self.pin_grid[0] * self.pin_grid[1]

    @property
    def clearance(self) -> float:
        return self.hole_radius - self.pin_radius

    def pin_positions(self) -> np.ndarray:
        """Nominal pin XY offsets from the component origin, grid centered."""
        r, c = self.pin_grid
        ys = (np.arange(r) - (r - 1) / 2.0) * self.pin_pitch
        xs = (np.arange(c) - (c - 1) / 2.0) * self.pin_pitch
        return np.array([[x, y] for y in ys for x in xs])

    def with_defects(self, offsets) -> "ComponentSpec":
        return replace(self, defect_offsets=np.asarray(offsets, float))


@dataclass(frozen=True)
class DefectModel:
    """Each pin bends independently with probability ``p_defect``; the bend is
    Gaussian in XY with std ``bend_std``, redrawn until its norm is at most
    ``bend_max``."""

    p_defect: float = 0.15
    bend_std: float = 0.00015
    bend_max: float = 0.00045

    def sample(self, rng: np.random.Generator, n: int, n_pins: int) -> np.ndarray:
        bent = rng.random((n, n_pins)) < self.p_defect
        off = rng.standard_normal((n, n_pins, 2)) * self.bend_std
        while True:
            over = np.linalg.norm(off, axis=2) > self.bend_max
            if not np.any(over):
                break
            off[over] = rng.standard_normal((int(over.sum()), 2)) * self.bend_std
        off[~bent] = 0.0
        return np.ascontiguousarray(off)


@dataclass(frozen=True)
class PimParams:
    n_smp: int = 500
    n_gen: int = 10
    n_pop: int = 50
    n_elite: int = 15
    sigma_x: float = 0.0003
    sigma_y: float = 0.0003
    search_window: float = 0.001
    sigma0: float = 0.0003
    resample_factor: int = 20

    def __post_init__(self):
        for name in ("n_smp", "n_gen", "n_pop", "n_elite"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(v))
        if self.n_elite > self.n_pop:
            raise ValueError("n_elite must not exceed n_pop")
        if self.sigma_x < 0 or self.sigma_y < 0:
            raise ValueError("sigma_x, sigma_y must be non-negative")


def feasible(spec: ComponentSpec, insertion_pose: Pose, true_goal: Pose) -> bool:
    """True iff every (possibly bent) pin lands within its hole clearance."""
    off = insertion_pose.t[:2] - true_goal.t[:2]
    goals = np.zeros((1, 2))
    defects = np.ascontiguousarray(spec.defect_offsets[None, :, :])
    return bool(_core.feasible_mask(float(off[0]), float(off[1]), goals, defects, spec.clearance)[0])


@dataclass
class Belief:
    goals: np.ndarray  # (n, 2) true-goal XY hypotheses
    defects: np.ndarray  # (n, P, 2)
    weights: np.ndarray  # (n,)
    sigma_x: float
    sigma_y: float
    perceived_goal: Pose
    clearance: float
    defect_model: DefectModel
    history: list = field(default_factory=list)  # failed XY positions
    rng: np.random.Generator | None = None
    resample_factor: int = 20

    @property
    def n(self) -> int:
        return self.goals.shape[0]

    def success_probability(self, xy) -> np.ndarray:
        """Weighted feasible fraction at each XY row of ``xy``."""
        cands = np.ascontiguousarray(np.atleast_2d(np.asarray(xy, dtype=float)))
        return _core.feasible_fitness(cands, self.goals, self.defects, self.weights, self.clearance)

    def feasible_at(self, xy) -> np.ndarray:
        return _core.feasible_mask(float(xy[0]), float(xy[1]), self.goals, self.defects, self.clearance)

    def write_csv(self, path) -> None:
        P = self.defects.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["goal_x", "goal_y"] + [f"d{p}_{a}" for p in range(P) for a in "xy"] + ["weight"])
            for g, d, wt in zip(self.goals, self.defects, self.weights):
                w.writerow([repr(float(v)) for v in (*g, *d.ravel(), wt)])


def _draw_prior(rng, n, sigma_x, sigma_y, center_xy, n_pins, defect_model):
    goals = center_xy + rng.standard_normal((n, 2)) * np.array([sigma_x, sigma_y])
    defects = defect_model.sample(rng, n, n_pins)
    return np.ascontiguousarray(goals), defects


def init_belief(
    params: PimParams,
    x_perceived: Pose,
    defect_model: DefectModel,
    seed: int,
    spec: ComponentSpec | None = None,
) -> Belief:
    """Prior belief: goals ~ N(x_perceived, diag(sigma^2)) in XY, sampled defects."""
    spec = spec or ComponentSpec()
    if params.n_smp < 1:
        raise ValueError("n_smp must be >= 1")
    rng = np.random.default_rng(seed)
    goals, defects = _draw_prior(
        rng, params.n_smp, params.sigma_x, params.sigma_y, x_perceived.t[:2], spec.n_pins, defect_model
    )
    w = np.full(params.n_smp, 1.0 / params.n_smp)
    return Belief(goals, defects, w, params.sigma_x, params.sigma_y, x_perceived, spec.clearance,
                  defect_model, [], rng, params.resample_factor)


def _consistent(goals, defects, history, clearance) -> np.ndarray:
    ok = np.ones(goals.shape[0], dtype=bool)
    for xy in history:
        ok &= ~_core.feasible_mask(float(xy[0]), float(xy[1]), goals, defects, clearance)
    return ok


def _draw_consistent(belief: Belief, history, need: int, cap: int):
    """Rejection-sample up to ``need`` prior hypotheses consistent with ``history``."""
    goals_acc, defects_acc = [], []
    drawn = found = 0
    P = belief.defects.shape[1]
    while found < need and drawn < cap:
        batch = min(max(need, 64), cap - drawn)
        g, d = _draw_prior(belief.rng, batch, belief.sigma_x, belief.sigma_y,
                           belief.perceived_goal.t[:2], P, belief.defect_model)
        drawn += batch
        take = np.flatnonzero(_consistent(g, d, history, belief.clearance))[: need - found]
        goals_acc.append(g[take])
        defects_acc.append(d[take])
        found += len(take)
    if not goals_acc:
        return np.zeros((0, 2)), np.zeros((0, P, 2)), drawn
    return np.concatenate(goals_acc), np.concatenate(defects_acc), drawn


def condition_on_failure(belief: Belief, failed_pose: Pose, refill: float = 1.0) -> Belief:
    """Zero out hypotheses under which ``failed_pose`` would have succeeded.

    When fewer than ``refill * n`` hypotheses survive (by default: whenever any
    hypothesis is eliminated) and the belief carries a
    random generator, it is topped back up to ``n`` with prior draws accepted
    only if consistent with the whole failure history (at most
    ``resample_factor * n`` draws). Rejection against the history makes the
    new draws exact posterior samples. If nothing survives at all,
    :class:`BeliefCollapse` is raised.
    """
    xy = np.array(failed_pose.t[:2], dtype=float)
    history = belief.history + [xy]
    hit = belief.feasible_at(xy) & (belief.weights > 0.0)
    if not np.any(hit):
        # no live hypothesis predicted success here: nothing to learn
        return replace(belief, history=history)
    w = np.where(hit, 0.0, belief.weights)
    alive = w > 0.0
    n = belief.n
    survivors = int(alive.sum())
    if survivors >= refill * n or belief.rng is None:
        total = float(np.sum(w))
        if total <= 0.0:
            raise BeliefCollapse("every hypothesis was contradicted")
        return replace(belief, weights=w / total, history=history)

    cap = belief.resample_factor * n
    g, d, drawn = _draw_consistent(belief, history, n - survivors, cap)
    goals = np.ascontiguousarray(np.concatenate([belief.goals[alive], g]))
    defects = np.ascontiguousarray(np.concatenate([belief.defects[alive], d]))
    if goals.shape[0] == 0:
        raise BeliefCollapse(f"no consistent hypothesis in {drawn} prior draws")
    m = goals.shape[0]
    return replace(belief, goals=goals, defects=defects, weights=np.full(m, 1.0 / m), history=history)


def infer_goal(belief: Belief, params: PimParams, seed: int) -> tuple[Pose, float]:
    """Insertion pose maximizing the estimated success probability, and that probability.

    CMA-ES searches XY offsets from the perceived goal inside a square window;
    the perceived goal itself is evaluated first. Ties prefer the candidate
    closest to the perceived goal, then the earliest evaluated.
    """
    if belief.n == 0:
        raise ValueError("belief is empty")
    base = belief.perceived_goal.t[:2].astype(float)
    half = params.search_window
    cfg = EsConfig(
        dim=2,
        mean0=np.zeros(2),
        sigma0=params.sigma0,
        pop_size=params.n_pop,
        elite_size=params.n_elite,
        max_gens=params.n_gen,
        bounds=np.array([[-half, half], [-half, half]]),
        seed=seed,
    )
    es = CMAES(cfg)
    offsets = [np.zeros((1, 2))]
    fits = [belief.success_probability(base[None, :])]
    for _ in range(params.n_gen):
        X = es.ask()
        f = belief.success_probability(base + X)
        offsets.append(X)
        fits.append(f)
        es.tell(X, -f)
    offsets = np.concatenate(offsets)
    fits = np.concatenate(fits)
    top = fits.max()
    tied = np.flatnonzero(fits >= top - 1e-12)
    dist = np.linalg.norm(offsets[tied], axis=1)
    best = tied[np.lexsort((tied, dist))[0]]
    xy = base + offsets[best]
    pose = Pose(np.array([xy[0], xy[1], belief.perceived_goal.t[2]]), belief.perceived_goal.r)
    prob = float(belief.success_probability(xy[None, :])[0])
    return pose, min(1.0, max(0.0, prob))


def random_retry_goal(perceived_goal: Pose, sigma_x: float, sigma_y: float, rng: np.random.Generator) -> Pose:
    """Baseline policy: a fresh Gaussian draw around the perceived goal."""
    d = rng.standard_normal(2) * np.array([sigma_x, sigma_y])
    return perceived_goal.offset(d[0], d[1], 0.0)


def synthetic_tcomp(params: PimParams, coeff: float) -> float:
    """Deterministic stand-in for one inference call's computation time."""
    return coeff * params.n_smp * params.n_pop * params.n_gen
