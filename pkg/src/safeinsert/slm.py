"""Safe learning module: CMA-ES tuning of the tracker/agent and inference
parameter groups against episode rewards, followed by joint fine-tuning in
shrunk ranges.

The optimizer works in normalized coordinates (each parameter's range mapped
to [0, 1]); integer parameters are rounded when a candidate is evaluated.
Episode tasks use common random numbers: the task seen by a candidate depends
on the phase, the candidate's index in its generation and the episode index,
not on the generation, so generations are compared on identical task sets.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .cmaes import CMAES, EsConfig, EsRun, Generation
from .episode import PIM, run_abstract_task, run_episode
from .kinematics import ArmModel, reference_arm
from .occt import OcctParams
from .pim import PimParams
from .sia import INFEASIBLE, SUCCESS, SiaParams
from .simenv import EnvConfig, reward_occt, reward_pim, sample_task

OCCT_SIA = "occt_sia"
PIM_GROUP = "pim"
PHASES = ("occt_sia", "pim", "finetune")


@dataclass(frozen=True)
class ParamEntry:
    name: str
    default: float
    lo: float
    hi: float
    group: str
    integer: bool = False

    @property
    def width(self) -> float:
        return self.hi - self.lo


TABLE = (
    ParamEntry("v_Q", 10.0, 0.0, 20.0, OCCT_SIA),
    ParamEntry("v_S", 100.0, 90.0, 110.0, OCCT_SIA),
    ParamEntry("T_occt", 1.0, 0.75, 3.0, OCCT_SIA),
    ParamEntry("inv_dt", 10.0, 5.0, 20.0, OCCT_SIA),
    ParamEntry("dz", 0.015, 0.005, 0.025, OCCT_SIA),
    ParamEntry("n_smp", 500, 5, 1000, PIM_GROUP, True),
    ParamEntry("n_gen", 10, 2, 20, PIM_GROUP, True),
    ParamEntry("n_pop", 50, 3, 100, PIM_GROUP, True),
    ParamEntry("n_elite", 15, 3, 30, PIM_GROUP, True),
    ParamEntry("sigma_x", 0.0003, 0.00001, 0.0005, PIM_GROUP),
    ParamEntry("sigma_y", 0.0003, 0.00001, 0.0005, PIM_GROUP),
)
ENTRIES = {e.name: e for e in TABLE}
# v_Q = 0 is inside the learnable range but the tracker needs a positive weight
MIN_POSITIVE_WEIGHT = 1e-9


class ParamSet:
    """Named parameter values with their ranges and learning groups."""

    def __init__(self, values: dict | None = None):
        self.values = {e.name: float(e.default) for e in TABLE}
        for k, v in (values or {}).items():
            if k not in ENTRIES:
                raise KeyError(f"unknown parameter {k!r}")
            self.values[k] = float(v)
        for e in TABLE:
            v = self.values[e.name]
            if not e.lo - 1e-12 <= v <= e.hi + 1e-12:
                raise ValueError(f"{e.name}={v} outside [{e.lo}, {e.hi}]")

    @staticmethod
    def names(group: str | None = None) -> list[str]:
        return [e.name for e in TABLE if group is None or e.group == group]

    def copy(self) -> "ParamSet":
        return ParamSet(dict(self.values))

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamSet) and self.values == other.values

    def __repr__(self) -> str:
        return f"ParamSet({self.values})"

    def normalized(self, names) -> np.ndarray:
        return np.array([(self.values[n] - ENTRIES[n].lo) / ENTRIES[n].width for n in names])

    def with_normalized(self, names, z) -> "ParamSet":
        vals = dict(self.values)
        for n, zi in zip(names, np.clip(z, 0.0, 1.0)):
            e = ENTRIES[n]
            vals[n] = e.lo + float(zi) * e.width
        return ParamSet(vals)

    def resolved(self) -> dict:
        """Values as evaluated: integers rounded, ``n_elite <= n_pop``."""
        out = {}
        for e in TABLE:
            v = self.values[e.name]
            out[e.name] = int(round(v)) if e.integer else v
        out["n_elite"] = min(out["n_elite"], out["n_pop"])
        return out

    def occt_params(self, base: OcctParams | None = None) -> OcctParams:
        base = base or OcctParams()
        r = self.resolved()
        return OcctParams.from_learnable(
            max(r["v_Q"], MIN_POSITIVE_WEIGHT), r["v_S"], r["T_occt"], r["inv_dt"],
            b_u=base.b_u, b_v=base.b_v, replan_error_threshold=base.replan_error_threshold,
        )

    def sia_params(self, base: SiaParams | None = None) -> SiaParams:
        return replace(base or SiaParams(), dz=self.resolved()["dz"])

    def pim_params(self, base: PimParams | None = None) -> PimParams:
        r = self.resolved()
        return replace(
            base or PimParams(),
            n_smp=r["n_smp"], n_gen=r["n_gen"], n_pop=r["n_pop"], n_elite=r["n_elite"],
            sigma_x=r["sigma_x"], sigma_y=r["sigma_y"],
        )

    def to_dict(self) -> dict:
        return dict(self.values)

    def write_json(self, path, extra: dict | None = None) -> None:
        doc = {"values": self.to_dict(), **(extra or {})}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> tuple["ParamSet", dict]:
        with open(path) as fh:
            doc = json.load(fh)
        return cls(doc["values"]), doc


@dataclass(frozen=True)
class SlmConfig:
    pop_size: int = 10
    gens_occt_sia: int = 25
    gens_pim: int = 25
    gens_finetune: int = 10
    episodes_per_candidate: int = 1
    finetune_episodes: int = 1
    n_tasks: int = 100
    sigma0: float = 0.3
    finetune_sigma0: float = 0.06
    finetune_fraction: float = 0.1
    finetune_bias: float = 0.0003
    max_trials: int = 20
    seed: int = 0


@dataclass
class LearnReport:
    phase: str
    env_hash: str
    names: list
    run: EsRun = field(default_factory=EsRun)
    records: list = field(default_factory=list)
    boxes: np.ndarray | None = None

    def generation_means(self, metric: str, feasible_only: bool = True) -> np.ndarray:
        """Per-generation mean of ``metric`` over episodes, infeasible ones excluded."""
        gens = sorted({r["iter"] for r in self.records})
        out = []
        for g in gens:
            vals = [r[metric] for r in self.records
                    if r["iter"] == g and (not feasible_only or r.get("feasible", 1))]
            out.append(float(np.mean(vals)) if vals else math.nan)
        return np.array(out)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "env_hash": self.env_hash,
            "names": list(self.names),
            "best_f": self.run.best_f,
            "best_x": None if self.run.best_x is None else [float(v) for v in self.run.best_x],
            "records": self.records,
        }


def _task_seed(master: int, phase: str, index: int, episode: int) -> int:
    tag = PHASES.index(phase)
    return int(np.random.SeedSequence([int(master), tag, int(index), int(episode)]).generate_state(1)[0])


def _optimize(phase, params: ParamSet, names, lo, hi, sigma0, gens, cfg: SlmConfig, evaluate, report):
    """Run CMA-ES over ``names`` in normalized box ``[lo, hi]``; return the best ParamSet."""
    if gens <= 0 or not names:
        return params.copy()
    z0 = params.normalized(names)
    es_cfg = EsConfig(
        dim=len(names), mean0=z0, sigma0=sigma0, pop_size=cfg.pop_size,
        max_gens=gens, bounds=np.column_stack([lo, hi]),
        seed=_task_seed(cfg.seed, phase, 10**6, 0) % (2**32),
    )
    es = CMAES(es_cfg)
    run = report.run
    best = (math.inf, params.copy())
    for g in range(gens):
        Z = es.ask()
        costs = np.empty(len(Z))
        for i, z in enumerate(Z):
            cand = params.with_normalized(names, z)
            costs[i] = evaluate(cand, g, i)
            if costs[i] < best[0]:
                best = (float(costs[i]), cand)
        fit = CMAES.sanitize(costs, es_cfg.infeasible_penalty)
        run.best_f = min(run.best_f, float(np.min(fit)))
        if best[0] == run.best_f:
            run.best_x = best[1].normalized(names)
        run.generations.append(Generation(Z, fit, run.best_f, es.mean.copy(), es.sigma, es.C.copy()))
        es.tell(Z, fit)
    return best[1]


def _occt_evaluator(phase, env_config, model, base, episodes, cfg, report):
    def evaluate(cand: ParamSet, g: int, i: int) -> float:
        occt = cand.occt_params(base["occt"])
        sia = cand.sia_params(base["sia"])
        pim = cand.pim_params(base["pim"])
        costs = []
        for e in range(episodes):
            seed = _task_seed(cfg.seed, phase, i, e)
            task = sample_task(env_config, seed)
            res = run_episode(task, model, occt, sia, pim, env_config, seed=seed, policy=PIM)
            st = res.stats
            cost = reward_occt(st)
            costs.append(cost)
            report.records.append({
                "iter": g, "cand": i, "episode": e,
                "force": st.max_force, "time": st.t_insert, "reward": -cost,
                "feasible": int(st.outcome != INFEASIBLE), "success": int(st.outcome == SUCCESS),
                "collisions": st.collisions, "trials": st.attempts, "t_comp": st.t_comp,
                "params": cand.to_dict(),
            })
        return float(np.mean(costs))

    return evaluate


def _defaults(base):
    base = dict(base or {})
    base.setdefault("occt", OcctParams())
    base.setdefault("sia", SiaParams())
    base.setdefault("pim", PimParams())
    return base


def learn_occt_sia(
    params: ParamSet,
    env_config: EnvConfig,
    cfg: SlmConfig,
    model: ArmModel | None = None,
    base: dict | None = None,
) -> tuple[ParamSet, LearnReport]:
    """Tune the tracker/agent group on tasks whose perceived goal is exact."""
    model = model or reference_arm()
    base = _defaults(base)
    env = replace(env_config, defect_prob=0.0, noise_x=0.0, noise_y=0.0, perception_bias=(0.0, 0.0))
    names = ParamSet.names(OCCT_SIA)
    report = LearnReport(OCCT_SIA, env_config.digest(), names)
    ev = _occt_evaluator(OCCT_SIA, env, model, base, cfg.episodes_per_candidate, cfg, report)
    d = len(names)
    best = _optimize(OCCT_SIA, params, names, np.zeros(d), np.ones(d), cfg.sigma0, cfg.gens_occt_sia, cfg, ev, report)
    return _merge(params, best, names), report


def learn_pim(
    params: ParamSet,
    env_config: EnvConfig,
    cfg: SlmConfig,
    base: dict | None = None,
) -> tuple[ParamSet, LearnReport]:
    """Tune the inference sample and search sizes on the abstract retry loop.

    The perception standard deviations stay fixed in this phase.
    """
    base = _defaults(base)
    names = ["n_smp", "n_gen", "n_pop", "n_elite"]
    report = LearnReport(PIM_GROUP, env_config.digest(), names)
    tasks = [sample_task(env_config, _task_seed(cfg.seed, PIM_GROUP, 0, k)) for k in range(cfg.n_tasks)]

    def evaluate(cand: ParamSet, g: int, i: int) -> float:
        pim = cand.pim_params(base["pim"])
        costs = []
        for k, task in enumerate(tasks):
            out = run_abstract_task(task, pim, env_config, PIM, cfg.max_trials, 0.0, seed=task.seed)
            cost = reward_pim(not out.success, out.attempts, out.t_comp)
            costs.append(cost)
            report.records.append({
                "iter": g, "cand": i, "episode": k,
                "trials": out.attempts, "t_comp": out.t_comp, "reward": -cost,
                "success": int(out.success), "feasible": 1, "params": cand.to_dict(),
            })
        return float(np.mean(costs))

    d = len(names)
    best = _optimize(PIM_GROUP, params, names, np.zeros(d), np.ones(d), cfg.sigma0, cfg.gens_pim, cfg, evaluate, report)
    return _merge(params, best, names), report


def finetune_boxes(params: ParamSet, names, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalized box of +/- ``fraction`` of each range around the current values."""
    z = params.normalized(names)
    return np.clip(z - fraction, 0.0, 1.0), np.clip(z + fraction, 0.0, 1.0)


def finetune(
    params: ParamSet,
    env_config: EnvConfig,
    cfg: SlmConfig,
    model: ArmModel | None = None,
    base: dict | None = None,
) -> tuple[ParamSet, LearnReport]:
    """Jointly tune all parameters inside shrunk boxes, with deliberately biased perception."""
    model = model or reference_arm()
    base = _defaults(base)
    # insertable components with a deliberately wrong perceived goal: every
    # episode starts with a collision, none is lost to an impossible component
    bias = env_config.perception_bias
    if bias[0] == 0.0 and bias[1] == 0.0:
        bias = (cfg.finetune_bias, 0.0)
    env = replace(env_config, defect_prob=0.0, noise_x=0.0, noise_y=0.0, perception_bias=bias)
    names = ParamSet.names()
    lo, hi = finetune_boxes(params, names, cfg.finetune_fraction)
    report = LearnReport("finetune", env_config.digest(), names, boxes=np.column_stack([lo, hi]))
    ev = _occt_evaluator("finetune", env, model, base, cfg.finetune_episodes, cfg, report)
    best = _optimize("finetune", params, names, lo, hi, cfg.finetune_sigma0, cfg.gens_finetune, cfg, ev, report)
    return best, report


def _merge(params: ParamSet, best: ParamSet, names) -> ParamSet:
    vals = dict(params.values)
    for n in names:
        vals[n] = best.values[n]
    return ParamSet(vals)


# -- export ------------------------------------------------------------------

SCATTER_COLUMNS = {
    OCCT_SIA: ("force", "time", "reward", "feasible"),
    PIM_GROUP: ("trials", "t_comp", "reward", "success"),
    "finetune": ("force", "time", "reward", "feasible"),
}


def running_averages(report: LearnReport) -> list[dict]:
    """Per-iteration means of the scatter metrics over feasible episodes."""
    cols = [c for c in SCATTER_COLUMNS[report.phase] if c not in ("feasible", "success")]
    rows = []
    for g in sorted({r["iter"] for r in report.records}):
        sel = [r for r in report.records if r["iter"] == g and r.get("feasible", 1)]
        row = {"iter": g, "n": len(sel)}
        for c in cols:
            row[f"mean_{c}"] = float(np.mean([r[c] for r in sel])) if sel else math.nan
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def export_curves(report: LearnReport, path) -> list[str]:
    """Write scatter, running-average, parameter-metric and optimizer CSVs; return file paths."""
    os.makedirs(path, exist_ok=True)
    ph = report.phase
    cols = SCATTER_COLUMNS[ph]
    files = []

    scatter = os.path.join(path, f"{ph}_scatter.csv")
    with open(scatter, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iter",) + cols)
        for r in report.records:
            w.writerow([r["iter"]] + [_fmt(r[c]) for c in cols])
    files.append(scatter)

    running = os.path.join(path, f"{ph}_running.csv")
    mcols = [c for c in cols if c not in ("feasible", "success")]
    with open(running, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "n"] + [f"mean_{c}" for c in mcols])
        for row in running_averages(report):
            w.writerow([row["iter"], row["n"]] + [_fmt(row[f"mean_{c}"]) for c in mcols])
    files.append(running)

    long = os.path.join(path, f"{ph}_param_metric.csv")
    with open(long, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "cand", "episode", "param", "value", "metric", "metric_value"])
        for r in report.records:
            for pname in report.names:
                for m in cols:
                    w.writerow([r["iter"], r["cand"], r["episode"], pname,
                                _fmt(float(r["params"][pname])), m, _fmt(r[m])])
    files.append(long)

    es = os.path.join(path, f"{ph}_es.csv")
    report.run.write_csv(es)
    files.append(es)
    return files
