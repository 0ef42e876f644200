"""YAML scenario files.

Layout (every section optional; missing keys keep the scenario preset)::

    scenario: high_vol          # bull | bear | high_vol | demand_shock_pos | demand_shock_neg
                                # | liquidity_crisis | custom
    seed: 42
    runs: 100
    horizon: 2000
    stochastic:
      demand: {mu: 0.0, sigma: 0.01, jump_rate: 0.0, p_up: 0.3, eta_up: 10.0, eta_down: 5.0}
      shock:  {mu: 0.0, sigma: 0.004}
      rho: 0.5
    pool: {x: 1000000, y: 1000000, fee_rate: 0.003, buyback_fee: 0.0}
    treasury: {T0: 200000, ops_cost: 250, mode: ops_clamped}
    epoch: {N: 50, block_time: 12}
    market: {kappa: 0.03, fundamental_elasticity: 1.0, ema_beta: 0.0645}
    events: {demand_jump_epoch: 1000, demand_jump: 0.4, liquidity_epoch: null, liquidity_fraction: 0.0}
    policy: {name: dcbm, kp: 15, ki: 0.3, kd: 1, gamma: 0.2}
    agents: {n_operators: 50, speculator_stake: 0.75}
    attack: {kind: fgsm_flash, eps: 0.01, warmup: 60}
    tuning: {kp: [5, 15], ki: [0.3], kd: [0, 1], mode: standard}
    stability: {alpha: 0.075, kp: [1, 5, 10], ki: [0, 0.3, 1], kd: [0, 1, 2]}
    ablation: {runs: 200, seed: 0}
    replay: {path: prices.csv, column: price, timestamp_column: timestamp}

Errors name the offending key as a dotted path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import replace
from pathlib import Path

import yaml

from .agents import AgentParams
from .analysis import AblationSpec
from .controller import Gains
from .errors import ConfigError, DCBMError
from .harness import AttackSpec, PolicySpec, ScenarioConfig, scenario
from .stochastic import JumpDiffusionParams
from .tuning import TuningSpec

TOP = {"scenario", "seed", "runs", "horizon", "stochastic", "pool", "treasury", "epoch", "market", "events",
       "policy", "agents", "attack", "tuning", "stability", "ablation", "replay"}
POOL = {"x": "x0", "y": "y0", "fee_rate": "fee_rate", "buyback_fee": "buyback_fee"}
TREASURY = {"T0": "T0", "ops_cost": "ops_cost", "mode": "accounting_mode"}
EPOCH = {"N": "epoch_length", "block_time": "block_time"}
MARKET = {"kappa": "kappa", "fundamental_elasticity": "fundamental_elasticity", "ema_beta": "ema_beta"}
EVENTS = {k: k for k in ("demand_jump_epoch", "demand_jump", "liquidity_epoch", "liquidity_fraction")}
POLICY_KEYS = {"name", "rho", "spend_fraction", "hysteresis", "horizon", "levels", "effort_weight", "kp", "ki", "kd",
               "gamma", "derivative_mode", "filter_coeff", "input_smooth_window", "clamp_rule", "integral_clamp",
               "output_rate_limit"}
STABILITY_KEYS = {"alpha", "kp", "ki", "kd"}
REPLAY_KEYS = {"path", "column", "timestamp_column"}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _section(d, key, allowed):
    sec = d.get(key)
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be a mapping")
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{key}.{k}", "unknown key")
    return sec


def _number(key, v, integer=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if integer:
        if float(v) != int(v):
            raise ConfigError(key, f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _mapped(d, key, table, types):
    sec = _section(d, key, table)
    out = []
    for k, v in sec.items():
        name = table[k]
        kind = types.get(name, float)
        if kind is str:
            if not isinstance(v, str):
                raise ConfigError(f"{key}.{k}", f"expected a string, got {v!r}")
        else:
            v = _number(f"{key}.{k}", v, integer=kind in (int, "opt_int"), allow_none=kind == "opt_int")
        out.append((f"{key}.{k}", name, v))
    return out


def _jd(key, sec, base):
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be a mapping")
    allowed = _fields(JumpDiffusionParams)
    vals = {}
    for k, v in sec.items():
        if k not in allowed:
            raise ConfigError(f"{key}.{k}", "unknown key")
        vals[k] = _number(f"{key}.{k}", v)
    try:
        return replace(base, **vals)
    except DCBMError as exc:
        raise ConfigError(key, str(exc)) from exc


def _list(key, v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (float(v),)
    if not isinstance(v, list) or not v:
        raise ConfigError(key, "expected a nonempty list of numbers")
    return tuple(_number(f"{key}[{i}]", x) for i, x in enumerate(v))


def parse_config(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for k in d:
        if k not in TOP:
            raise ConfigError(str(k), "unknown key")
    name = d.get("scenario", "custom")
    if not isinstance(name, str):
        raise ConfigError("scenario", f"expected a string, got {name!r}")
    try:
        top = {}
        for k in ("seed", "runs", "horizon"):
            if k in d:
                top[k] = _number(k, d[k], integer=True)
                if top[k] < (0 if k == "seed" else 1):
                    raise ConfigError(k, f"out of range: {top[k]}")
        base = scenario(name, **{k: v for k, v in top.items() if k == "horizon"})
    except ConfigError:
        raise
    except DCBMError as exc:
        raise _as_config_error("scenario", exc) from exc

    world = base.world
    updates = []            # (dotted key, field, value), applied one at a time so errors name the key
    st = _section(d, "stochastic", {"demand", "shock", "rho"})
    if "demand" in st:
        updates.append(("stochastic.demand", "demand", _jd("stochastic.demand", st["demand"], world.demand)))
    if "shock" in st:
        updates.append(("stochastic.shock", "shock", _jd("stochastic.shock", st["shock"], world.shock)))
    if "rho" in st:
        updates.append(("stochastic.rho", "rho", _number("stochastic.rho", st["rho"])))
    updates += _mapped(d, "pool", POOL, {})
    updates += _mapped(d, "treasury", TREASURY, {"accounting_mode": str})
    updates += _mapped(d, "epoch", EPOCH, {"epoch_length": int})
    updates += _mapped(d, "market", MARKET, {})
    updates += _mapped(d, "events", EVENTS, {"demand_jump_epoch": "opt_int", "liquidity_epoch": "opt_int"})
    ag = _section(d, "agents", _fields(AgentParams))
    agents = world.agents
    for k, v in ag.items():
        kind = {f.name: f.type for f in dataclasses.fields(AgentParams)}[k]
        val = _number(f"agents.{k}", v, integer=kind in ("int", int))
        agents = _wrap(f"agents.{k}", lambda: replace(agents, **{k: val}))
    if ag:
        updates.append(("agents", "agents", agents))
    for key, fld, val in updates:
        world = _wrap(key, lambda: replace(world, **{fld: val}))

    pol = _section(d, "policy", POLICY_KEYS)
    policy = base.policy
    if pol:
        params = {}
        for k, v in pol.items():
            if k == "name":
                continue
            if k in ("derivative_mode", "clamp_rule"):
                if not isinstance(v, str):
                    raise ConfigError(f"policy.{k}", f"expected a string, got {v!r}")
                params[k] = v
            elif k == "levels":
                params[k] = _list("policy.levels", v)
            else:
                params[k] = _number(f"policy.{k}", v, integer=k in ("horizon", "input_smooth_window"))
        policy = _wrap("policy.name", lambda: PolicySpec.of(pol.get("name", "dcbm"), **params))
        _wrap("policy", policy.build)

    attack = None
    if d.get("attack") is not None:
        at = _section(d, "attack", _fields(AttackSpec))
        vals = {}
        for k, v in at.items():
            if k == "kind":
                vals[k] = v
            else:
                vals[k] = _number(f"attack.{k}", v, integer=k in ("k", "warmup"))
        attack = _wrap("attack", lambda: AttackSpec(**vals))

    return _wrap("<root>", lambda: ScenarioConfig(name=name, world=world, policy=policy, attack=attack,
                                                  horizon=top.get("horizon", base.horizon),
                                                  runs=top.get("runs", base.runs), seed=top.get("seed", base.seed)))


def tuning_spec(d: dict, seed: int | None = None) -> tuple[TuningSpec, str]:
    sec = _section(d, "tuning", _fields(TuningSpec) | {"mode"})
    vals = {}
    for k, v in sec.items():
        if k in ("kp", "ki", "kd"):
            vals[k] = _list(f"tuning.{k}", v)
        elif k == "adversaries":
            if not isinstance(v, list) or not all(isinstance(a, list) and len(a) == 2 for a in v):
                raise ConfigError("tuning.adversaries", "expected a list of [eps, k] pairs")
            vals[k] = tuple((_number("tuning.adversaries", a[0]), _number("tuning.adversaries", a[1], True))
                            for a in v)
        elif k != "mode":
            vals[k] = _number(f"tuning.{k}", v, integer=k in ("warmup", "runs", "horizon", "seed"))
    if seed is not None:
        vals["seed"] = seed
    mode = sec.get("mode", "standard")
    if mode not in ("standard", "adversarial"):
        raise ConfigError("tuning.mode", f"expected standard or adversarial, got {mode!r}")
    return _wrap("tuning", lambda: TuningSpec(**vals)), mode


def stability_grid(d: dict) -> tuple[float, list[Gains]]:
    sec = _section(d, "stability", STABILITY_KEYS)
    for k in STABILITY_KEYS:
        if k not in sec:
            raise ConfigError(f"stability.{k}", "missing")
    alpha = _number("stability.alpha", sec["alpha"])
    if alpha <= 0:
        raise ConfigError("stability.alpha", "must be > 0")
    kp, ki, kd = (_list(f"stability.{k}", sec[k]) for k in ("kp", "ki", "kd"))
    return alpha, [Gains(a, b, c) for a in kp for b in ki for c in kd]


def ablation_spec(d: dict, seed: int | None = None, runs: int | None = None) -> AblationSpec:
    sec = _section(d, "ablation", _fields(AblationSpec) - {"gains"} | {"kp", "ki", "kd"})
    vals = {}
    g = {}
    for k, v in sec.items():
        if k in ("kp", "ki", "kd"):
            g[k] = _number(f"ablation.{k}", v)
        else:
            vals[k] = _number(f"ablation.{k}", v, integer=k in ("epochs", "runs", "seed"))
    if g:
        base = AblationSpec.gains
        vals["gains"] = Gains(g.get("kp", base.kp), g.get("ki", base.ki), g.get("kd", base.kd))
    if seed is not None:
        vals["seed"] = seed
    if runs is not None:
        vals["runs"] = runs
    return _wrap("ablation", lambda: AblationSpec(**vals))


def replay_source(d: dict) -> dict:
    sec = _section(d, "replay", REPLAY_KEYS)
    if "path" not in sec:
        raise ConfigError("replay.path", "missing")
    for k, v in sec.items():
        if not isinstance(v, str):
            raise ConfigError(f"replay.{k}", f"expected a string, got {v!r}")
    return sec


def read_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"no such file: {p}")
    try:
        d = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from exc
    return {} if d is None else d


def load_config(path) -> ScenarioConfig:
    return parse_config(read_yaml(path))


def _wrap(key, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except DCBMError as exc:
        raise _as_config_error(key, exc) from exc


def _as_config_error(key, exc):
    return ConfigError(key, str(exc))
