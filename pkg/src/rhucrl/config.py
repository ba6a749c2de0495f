"""Run configuration: YAML file, schema validation, defaults and object builders."""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema
import yaml

from .algorithm import VARIANTS, LearnerConfig
from .envs import ActionRobustWrapper, LinearToyEnv, ParameterRobustWrapper, PendulumEnv
from .gp import BetaSchedule, GpDynamicsModel, Kernel
from .optim import OptimizerBudget


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_budget = _obj({
    "population": _int1, "elite_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "iterations": _int1, "inner_population": _int1, "inner_iterations": _int1,
    "restarts": _int1, "particles": _int1, "init_std": _pos,
    "min_std": {"type": "number", "minimum": 0},
    "smoothing": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
})

SCHEMA = _obj({
    "environment": _obj({
        "id": {"enum": ["pendulum", "linear_toy"]},
        "horizon": _int1,
        "noise_std": {"type": "number", "minimum": 0},
        "dt": _pos,
        "params": {"type": "object"},
    }, ["id"]),
    "setting": _obj({
        "kind": {"enum": ["adversarial", "action", "parameter"]},
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "parameter": {"type": "string"},
        "interval": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
    }, ["kind"]),
    "model": _obj({
        "kernel": _obj({"family": {"enum": ["se", "linear"]},
                        "lengthscales": {"type": "array", "items": _pos, "minItems": 1},
                        "signal_variance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}),
        "lam": {"anyOf": [{"const": "pH"}, _pos]},
        "out_scale": {"type": "array", "items": _pos, "minItems": 1},
        "target": {"enum": ["delta", "absolute"]},
        "beta": _obj({"mode": {"enum": ["fixed", "theoretical"]},
                      "value": {"type": "number", "minimum": 0},
                      "rkhs_bound": {"type": "number", "minimum": 0},
                      "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
        "recalibrate": {"type": "boolean"},
        "admit_variance": {"type": "number", "minimum": 0},
        "max_points": {"anyOf": [{"type": "null"}, _int1]},
    }),
    "policies": _obj({
        "agent": {"enum": ["constant", "linear", "quadratic", "radial"]},
        "adversary": {"enum": ["none", "constant", "linear", "quadratic", "radial"]},
        "eta": {"enum": ["none", "constant", "linear", "quadratic", "radial"]},
        "hallucination_mode": {"enum": ["joint", "nested"]},
    }),
    "optimizer": _budget,
    "value_optimizer": _budget,
    "evaluation": _obj({
        "budget_multiplier": _pos,
        "restarts": _int1,
        "particles": _int1,
        "adversary": {"enum": ["none", "constant", "linear", "quadratic", "radial"]},
        "parameter_values": {"type": "array", "items": _num, "minItems": 1},
        "seeds_per_cell": _int1,
        "success_threshold": _num,
    }),
    "variant": {"enum": list(VARIANTS)},
    "episodes": {"type": "integer", "minimum": 0},
    "warmup_episodes": {"type": "integer", "minimum": 0},
    "warm_start": {"type": "boolean"},
    "checkpoint_every": {"type": "integer", "minimum": 0},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
}, ["environment", "setting"])

DEFAULTS = {
    "setting": {"alpha": 0.3, "parameter": "mass", "interval": [0.001, 2.0]},
    "model": {"kernel": {"family": "se", "lengthscales": [1.0], "signal_variance": 1.0},
              "lam": "pH", "target": "delta",
              "beta": {"mode": "fixed", "value": 1.0, "rkhs_bound": 1.0, "delta": 0.1},
              "recalibrate": False, "admit_variance": 0.0, "max_points": None},
    "policies": {"agent": "linear", "adversary": "constant", "eta": "linear",
                 "hallucination_mode": "joint"},
    "optimizer": {"population": 64, "elite_fraction": 0.1, "iterations": 30,
                  "inner_population": 16, "inner_iterations": 15, "restarts": 1,
                  "particles": 8, "init_std": 1.0, "min_std": 0.05, "smoothing": 0.7},
    "evaluation": {"budget_multiplier": 4.0, "restarts": 2, "particles": 1,
                   "adversary": "constant", "seeds_per_cell": 1},
    "variant": "RH-UCRL",
    "episodes": 200,
    "warmup_episodes": 0,
    "warm_start": True,
    "checkpoint_every": 50,
    "seed": 0,
    "output_dir": "runs/default",
}

# blocks that do not change what training produces
_UNHASHED = ("evaluation", "output_dir")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict) -> dict:
    """Schema-check ``raw`` and return it merged over the defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {e.message}") from None
    cfg = _merge(DEFAULTS, raw)
    lo, hi = cfg["setting"]["interval"]
    if not lo < hi:
        raise ConfigError("setting.interval: lower bound must be below upper bound")
    vals = cfg["evaluation"].get("parameter_values")
    if vals is not None:
        bad = [v for v in vals if not lo <= v <= hi]
        if bad:
            raise ConfigError(f"evaluation.parameter_values: {bad} outside [{lo}, {hi}]")
    try:
        build_env(cfg)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"environment: {e}") from None
    return cfg


def load(path) -> dict:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"unparseable YAML: {e}") from None
    return validate(raw or {})


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def config_hash(cfg: dict) -> str:
    core = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_base_env(cfg: dict):
    e = cfg["environment"]
    params = dict(e.get("params", {}))
    for key in ("horizon", "noise_std", "dt"):
        if key in e:
            params[key] = e[key]
    if e["id"] == "pendulum":
        return PendulumEnv(**params)
    params.pop("dt", None)
    return LinearToyEnv(**params)


def build_env(cfg: dict, alpha: float | None = None):
    env = build_base_env(cfg)
    s = cfg["setting"]
    if s["kind"] == "action":
        return ActionRobustWrapper(env, s["alpha"] if alpha is None else alpha)
    if s["kind"] == "parameter":
        return ParameterRobustWrapper(env, s["parameter"], tuple(s["interval"]))
    return env


def build_model(cfg: dict, env) -> GpDynamicsModel:
    m = cfg["model"]
    k = m["kernel"]
    b = m["beta"]
    sp = env.spec
    lam = m["lam"]
    lam_value = sp.state_dim * sp.horizon if lam == "pH" else float(lam)
    noise = float(max(sp.noise_std.max(), 1e-12))
    schedule = BetaSchedule(b["mode"], b["value"], b["rkhs_bound"], noise, lam_value, b["delta"])
    return GpDynamicsModel.for_env(
        env, kernel=Kernel(k["family"], tuple(k["lengthscales"]), k["signal_variance"]),
        lam=lam, out_scale=m.get("out_scale"), target=m["target"], beta_schedule=schedule,
        admit_variance=m["admit_variance"], max_points=m["max_points"])


def build_budget(block: dict) -> OptimizerBudget:
    return OptimizerBudget(**block)


def build_learner_config(cfg: dict) -> LearnerConfig:
    p = cfg["policies"]
    value = cfg.get("value_optimizer")
    return LearnerConfig(
        variant=cfg["variant"], budget=build_budget(cfg["optimizer"]),
        value_budget=None if value is None else build_budget(_merge(cfg["optimizer"], value)),
        agent_features=p["agent"], adversary_features=p["adversary"], eta_features=p["eta"],
        hallucination_mode=p["hallucination_mode"], warm_start=cfg["warm_start"],
        warmup_episodes=cfg["warmup_episodes"])
