"""Run configuration: one JSON document with a section per component.

Precedence is file < environment variables < explicit overrides. Environment
overrides use ``SAFEINSERT_<SECTION>__<KEY>`` (values parsed as JSON, falling
back to plain strings), plus ``SAFEINSERT_SEED`` and ``SAFEINSERT_OUT``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .kinematics import FLIP_X, UR10_DH, ArmModel
from .occt import OcctParams
from .pim import PimParams
from .sia import SiaParams
from .simenv import EnvConfig
from .slm import SlmConfig


class ConfigError(ValueError):
    pass


def _default_arm() -> dict:
    return {
        "dh": [list(r) for r in UR10_DH],
        "joint_limits": [[-np.pi, np.pi]] * 6,
        "tool": FLIP_X.tolist(),
        "base": np.eye(4).tolist(),
        "q_weights": [1.0] * 6,
    }


SECTIONS = {
    "occt": OcctParams,
    "sia": SiaParams,
    "pim": PimParams,
    "env": EnvConfig,
    "slm": SlmConfig,
}
ARM_KEYS = frozenset(_default_arm())
TOP_KEYS = frozenset({"seed", "out", "arm", *SECTIONS})


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs"
    arm: dict = field(default_factory=_default_arm)
    occt: OcctParams = field(default_factory=OcctParams)
    sia: SiaParams = field(default_factory=SiaParams)
    pim: PimParams = field(default_factory=PimParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    slm: SlmConfig = field(default_factory=SlmConfig)

    def arm_model(self) -> ArmModel:
        return ArmModel.from_config(self.arm)

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out, "arm": self.arm}
        for name in SECTIONS:
            d[name] = dataclasses.asdict(getattr(self, name))
        return json.loads(json.dumps(d))


def _build_section(name: str, cls, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ) -> dict:
    out: dict = {}
    for k, v in environ.items():
        if not k.startswith("SAFEINSERT_"):
            continue
        rest = k[len("SAFEINSERT_"):].lower()
        if rest in ("seed", "out"):
            out[rest] = _parse_env_value(v) if rest == "seed" else v
        elif "__" in rest:
            sec, key = rest.split("__", 1)
            out.setdefault(sec, {})[key] = _parse_env_value(v)
    return out


def _merge(base: dict, over: dict) -> dict:
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k].update(v)
        else:
            merged[k] = v
    return merged


def build_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw = {}
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        kw["seed"] = doc["seed"]
    if "out" in doc:
        kw["out"] = str(doc["out"])
    arm = _default_arm()
    if "arm" in doc:
        bad = set(doc["arm"]) - ARM_KEYS
        if bad:
            raise ConfigError(f"unknown key(s) in [arm]: {', '.join(sorted(bad))}")
        arm.update(doc["arm"])
    try:
        ArmModel.from_config(arm)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"[arm] {exc}") from exc
    kw["arm"] = arm
    for name, cls in SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be an object")
        kw[name] = _build_section(name, cls, section)
    return RunConfig(**kw)


def load_config(path=None, environ=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (optional), apply environment then explicit overrides, validate."""
    doc: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    doc = _merge(doc, env_overrides(os.environ if environ is None else environ))
    doc = _merge(doc, overrides or {})
    return build_config(doc)
