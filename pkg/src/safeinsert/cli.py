"""Command-line entry point: ``safeinsert {insert,benchmark-pim,learn,validate-config}``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .episode import PIM, RANDOM, run_abstract_task, run_episode
from .sia import SUCCESS, write_event_log
from .simenv import sample_task
from .slm import (
    OCCT_SIA,
    PIM_GROUP,
    LearnReport,
    ParamSet,
    export_curves,
    finetune,
    learn_occt_sia,
    learn_pim,
)

EXIT_OK = 0
EXIT_TASK_FAILED = 2
EXIT_CONFIG = 3
EXIT_PREREQUISITE = 4


class PrerequisiteError(RuntimeError):
    pass


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _error(out: str | None, kind: str, message: str, **extra) -> dict:
    doc = {"error": kind, "message": message, **extra}
    if out is not None:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "error.json"), doc)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return doc


def cmd_insert(cfg: RunConfig) -> int:
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    task = sample_task(cfg.env, cfg.seed)
    res = run_episode(task, cfg.arm_model(), cfg.occt, cfg.sia, cfg.pim, cfg.env, seed=cfg.seed)
    res.executed.write_csv(os.path.join(out, "trajectory.csv"))
    write_event_log(res.log, os.path.join(out, "events.jsonl"))
    _write_json(os.path.join(out, "stats.json"), res.stats.to_dict())
    _write_json(os.path.join(out, "task.json"), task.to_dict())
    st = res.stats
    print(f"outcome={st.outcome} attempts={st.attempts} collisions={st.collisions} "
          f"t_insert={st.t_insert!r} max_force={st.max_force!r}")
    if st.outcome == SUCCESS:
        return EXIT_OK
    _error(out, st.outcome, st.reason or "insertion did not succeed", stats=st.to_dict())
    return EXIT_TASK_FAILED


def benchmark_pim(cfg: RunConfig, n_tasks: int) -> tuple[list[dict], dict]:
    """Matched seeded tasks under PIM and Gaussian random retry, same stopping rules."""
    if n_tasks < 1:
        raise ConfigError("--tasks must be >= 1")
    seeds = np.random.SeedSequence(cfg.seed).generate_state(n_tasks)
    rows = []
    for k, s in enumerate(seeds):
        task = sample_task(cfg.env, int(s))
        for policy in (PIM, RANDOM):
            o = run_abstract_task(task, cfg.pim, cfg.env, policy, cfg.sia.max_failures, 0.0, seed=int(s))
            rows.append({"task": k, "seed": int(s), "policy": policy, "attempts": o.attempts,
                         "success": int(o.success), "t_comp": o.t_comp, "reason": o.reason})
    summary = {"n_tasks": n_tasks, "seed": cfg.seed}
    for policy in (PIM, RANDOM):
        sel = [r for r in rows if r["policy"] == policy]
        summary[policy] = {
            "mean_attempts": float(np.mean([r["attempts"] for r in sel])),
            "success_rate": float(np.mean([r["success"] for r in sel])),
            "mean_t_comp": float(np.mean([r["t_comp"] for r in sel])),
        }
    summary["advantage"] = summary[RANDOM]["mean_attempts"] - summary[PIM]["mean_attempts"]
    return rows, summary


def cmd_benchmark_pim(cfg: RunConfig, n_tasks: int) -> int:
    rows, summary = benchmark_pim(cfg, n_tasks)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "benchmark.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _write_json(os.path.join(cfg.out, "benchmark.json"), summary)
    for policy in (PIM, RANDOM):
        s = summary[policy]
        print(f"{policy:>6}: mean attempts {s['mean_attempts']:.3f}  success rate {s['success_rate']:.3f}")
    return EXIT_OK


def _params_path(out, phase):
    return os.path.join(out, f"params_{phase}.json")


def _save_phase(cfg: RunConfig, params: ParamSet, report: LearnReport) -> None:
    params.write_json(_params_path(cfg.out, report.phase), {"env_hash": report.env_hash, "phase": report.phase})
    _write_json(os.path.join(cfg.out, f"report_{report.phase}.json"), report.to_dict())
    export_curves(report, os.path.join(cfg.out, "curves"))


def _load_phase(cfg: RunConfig, phase: str) -> ParamSet:
    path = _params_path(cfg.out, phase)
    if not os.path.exists(path):
        raise PrerequisiteError(f"phase {phase!r} output missing: {path}")
    params, doc = ParamSet.read_json(path)
    if doc.get("env_hash") != cfg.env.digest():
        raise PrerequisiteError(f"phase {phase!r} was learned with a different environment configuration")
    return params


def cmd_learn(cfg: RunConfig, phase: str) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    model = cfg.arm_model()
    base = {"occt": cfg.occt, "sia": cfg.sia, "pim": cfg.pim}
    slm = replace(cfg.slm, seed=cfg.seed)
    params = ParamSet()
    if phase in ("occt_sia", "all"):
        params, rep = learn_occt_sia(params, cfg.env, slm, model, base)
        _save_phase(cfg, params, rep)
    if phase in ("pim", "all"):
        start = ParamSet() if phase == "pim" else params
        params, rep = learn_pim(start, cfg.env, slm, base)
        _save_phase(cfg, params, rep)
    if phase in ("finetune", "all"):
        occ = _load_phase(cfg, OCCT_SIA)
        pim = _load_phase(cfg, PIM_GROUP)
        vals = {**{n: occ.values[n] for n in ParamSet.names(OCCT_SIA)},
                **{n: pim.values[n] for n in ParamSet.names(PIM_GROUP)}}
        params, rep = finetune(ParamSet(vals), cfg.env, slm, model, base)
        _save_phase(cfg, params, rep)
    params.write_json(os.path.join(cfg.out, "params_final.json"), {"env_hash": cfg.env.digest()})
    print(json.dumps(params.resolved(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safeinsert", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("insert", help="run one simulated insertion episode"))
    b = common(sub.add_parser("benchmark-pim", help="compare goal inference with random retry"))
    b.add_argument("--tasks", type=int, default=100)
    l = common(sub.add_parser("learn", help="run the parameter learning protocol"))
    l.add_argument("--phase", choices=["occt_sia", "pim", "finetune", "all"], default="all")
    l.add_argument("--gens", type=int, help="generations for every phase")
    common(sub.add_parser("validate-config", help="check a configuration and print it resolved"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "gens", None) is not None:
        overrides["slm"] = {"gens_occt_sia": args.gens, "gens_pim": args.gens, "gens_finetune": args.gens}
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigError as exc:
        _error(None, "config", str(exc))
        return EXIT_CONFIG
    try:
        if args.command == "validate-config":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "insert":
            return cmd_insert(cfg)
        if args.command == "benchmark-pim":
            return cmd_benchmark_pim(cfg, args.tasks)
        return cmd_learn(cfg, args.phase)
    except ConfigError as exc:
        _error(cfg.out, "config", str(exc))
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        _error(cfg.out, "prerequisite", str(exc))
        return EXIT_PREREQUISITE


if __name__ == "__main__":
    sys.exit(main())
