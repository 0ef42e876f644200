"""Scenario configs, Monte Carlo orchestration and report serialization.

A run is fixed by (config, run_index): its random streams come from
``RngStream(seed, run_index)``, which mixes the two integers through numpy's
SeedSequence. Batched runs therefore match runs simulated alone.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import AgentParams
from .attacks import AttackOutcome, cw_arbitrage, fgsm_flash, pgd_sustained
from .controller import ActuatorConfig, CertConfig, Gains
from .errors import InvalidArgument
from .policies import DCBM, DEFAULT_GAINS, DEFAULT_GAMMA, FixedRate, MPCOracle, NoBuyback, Threshold, dcbm_cert
from .stochastic import JumpDiffusionParams
from .world import SERIES, World, WorldParams

SCHEMA_VERSION = 1
SCENARIOS = ("bull", "bear", "high_vol", "demand_shock_pos", "demand_shock_neg", "liquidity_crisis", "custom")
POLICY_NAMES = ("no_buyback", "fixed_rate", "threshold", "mpc_oracle", "dcbm", "dcbm_cert")
ATTACKS = ("fgsm_flash", "pgd_sustained", "cw_arbitrage")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class PolicySpec:
    name: str = "dcbm"
    params: tuple = ()        # sorted (key, value) pairs

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise InvalidArgument(f"unknown policy {self.name!r}")

    @classmethod
    def of(cls, name, **params):
        return cls(name, tuple(sorted(params.items())))

    def build(self):
        p = dict(self.params)
        if self.name == "no_buyback":
            return NoBuyback()
        if self.name == "fixed_rate":
            return FixedRate(p.get("rho", 0.5))
        if self.name == "threshold":
            return Threshold(p.get("spend_fraction", 0.05), p.get("hysteresis", 0.0))
        if self.name == "mpc_oracle":
            kw = {k: p[k] for k in ("horizon", "effort_weight") if k in p}
            if "levels" in p:
                kw["levels"] = tuple(p["levels"])
            return MPCOracle(**kw)
        gains = Gains(p.get("kp", DEFAULT_GAINS.kp), p.get("ki", DEFAULT_GAINS.ki), p.get("kd", DEFAULT_GAINS.kd))
        act = ActuatorConfig(**{"gamma": p.get("gamma", DEFAULT_GAMMA),
                                **{k: p[k] for k in ("derivative_mode", "filter_coeff", "input_smooth_window",
                                                     "clamp_rule") if k in p}})
        if self.name == "dcbm_cert":
            return dcbm_cert(gains, act, p.get("integral_clamp", 0.5), p.get("output_rate_limit", 0.1))
        return DCBM(gains, act, CertConfig())


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "fgsm_flash"
    eps: float = 0.01
    k: int = 3
    warmup: int = 60
    holding_cost: float = 0.0005
    delta_max: float = 0.5

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise InvalidArgument(f"unknown attack {self.kind!r}")
        if self.warmup < 0:
            raise InvalidArgument("warmup must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    world: WorldParams = field(default_factory=WorldParams)
    policy: PolicySpec = field(default_factory=PolicySpec)
    horizon: int = 2000
    runs: int = 100
    seed: int = 0
    attack: AttackSpec | None = None

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise InvalidArgument(f"unknown scenario {self.name!r}")
        if self.horizon < 1:
            raise InvalidArgument("horizon must be >= 1")
        if self.runs < 1:
            raise InvalidArgument("runs must be >= 1")
        if self.seed < 0:
            raise InvalidArgument("seed must be >= 0")

    def with_policy(self, name, **params) -> ScenarioConfig:
        return replace(self, policy=PolicySpec.of(name, **params))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["policy"] = {"name": self.policy.name, **dict(self.policy.params)}
        d["schema_version"] = SCHEMA_VERSION
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def scenario(name: str, **overrides) -> ScenarioConfig:
    """Preset scenario; keyword overrides replace ScenarioConfig fields."""
    base = WorldParams()
    mid = overrides.get("horizon", ScenarioConfig.horizon) // 2
    demand = base.demand
    shock = base.shock
    if name == "bull":
        world = replace(base, demand=replace(demand, mu=0.0003))
    elif name == "bear":
        world = replace(base, demand=replace(demand, mu=-0.0003))
    elif name == "high_vol":
        world = replace(base, shock=replace(shock, sigma=0.01), demand=replace(demand, sigma=0.012))
    elif name == "demand_shock_pos":
        world = replace(base, demand_jump_epoch=mid, demand_jump=0.4)
    elif name == "demand_shock_neg":
        world = replace(base, demand_jump_epoch=mid, demand_jump=-0.4)
    elif name == "liquidity_crisis":
        world = replace(base, liquidity_epoch=mid, liquidity_fraction=0.8)
    elif name == "custom":
        world = base
    else:
        raise InvalidArgument(f"unknown scenario {name!r}")
    return ScenarioConfig(name=name, world=overrides.pop("world", world), **overrides)


# runs -----------------------------------------------------------------------------

@dataclass
class RunReport:
    run_index: int
    seed: int
    config_hash: str
    series: dict               # name -> (horizon,) array
    metrics: dict              # name -> float
    attack: dict | None = None
    schema_version: int = SCHEMA_VERSION

    def to_csv(self) -> str:
        return series_csv([self])

    def to_json(self) -> str:
        return json.dumps({"schema_version": self.schema_version, "run_index": self.run_index, "seed": self.seed,
                           "config_hash": self.config_hash, "metrics": self.metrics, "attack": self.attack},
                          sort_keys=True, indent=2)


# version 1 layout of RunReport.to_json(); bump SCHEMA_VERSION when it changes
REPORT_SCHEMA = {
    "schema_version": int,
    "run_index": int,
    "seed": int,
    "config_hash": str,
    "metrics": dict,
    "attack": (dict, type(None)),
}
METRICS = ("sigma_p", "eps_ma", "churn_pct", "gini", "treasury_growth_pct", "control_effort", "total_spent",
           "revenue", "burned", "innovation_rate", "final_price")


def validate_report(d: dict) -> None:
    """Raise InvalidArgument unless ``d`` matches the current report schema."""
    if set(d) != set(REPORT_SCHEMA):
        raise InvalidArgument(f"report keys {sorted(d)} do not match schema {SCHEMA_VERSION}")
    for k, t in REPORT_SCHEMA.items():
        if not isinstance(d[k], t) or isinstance(d[k], bool):
            raise InvalidArgument(f"report field {k!r} has the wrong type")
    if d["schema_version"] != SCHEMA_VERSION:
        raise InvalidArgument(f"schema version {d['schema_version']} != {SCHEMA_VERSION}")
    if set(d["metrics"]) != set(METRICS):
        raise InvalidArgument("report metrics do not match the schema")


def _attack(world, spec: AttackSpec) -> AttackOutcome:
    world.run(min(spec.warmup, world.horizon - 1))
    if spec.kind == "fgsm_flash":
        return fgsm_flash(world, spec.eps, spec.holding_cost)
    if spec.kind == "pgd_sustained":
        return pgd_sustained(world, spec.eps, min(spec.k, world.horizon - world.k), holding_cost=spec.holding_cost)
    delta, out = cw_arbitrage(world, spec.delta_max, holding_cost=spec.holding_cost)
    world.step()
    return out


def simulate_batch(config: ScenarioConfig, run_indices, shock_override=None) -> tuple[World, AttackOutcome | None]:
    """Run ``run_indices`` together; ``shock_override`` replaces the shock path of every run."""
    world = World(config.world, config.policy.build(), config.horizon, config.seed, run_indices)
    if shock_override is not None:
        s = np.asarray(shock_override, dtype=float)
        if s.size < config.horizon:
            raise InvalidArgument(f"replay series has {s.size} increments, horizon needs {config.horizon}")
        world.shock[: config.horizon] = s[: config.horizon, None]
    outcome = _attack(world, config.attack) if config.attack is not None else None
    world.run()
    return world, outcome


def _reports(config, world, outcome) -> list[RunReport]:
    m = world.metrics()
    h = config.hash()
    out = []
    for j, r in enumerate(world.run_indices):
        att = None
        if outcome is not None:
            att = {"attacker_profit": float(outcome.attacker_profit[j]), "success": bool(outcome.success[j]),
                   "treasury_drain": float(outcome.treasury_drain[j]), "deviation": float(outcome.deviation[j])}
        out.append(RunReport(int(r), config.seed, h, {k: v[:, j].copy() for k, v in world.series.items()},
                             {k: float(v[j]) for k, v in m.items()}, att))
    return out


def run_once(config: ScenarioConfig, run_index: int, shock_override=None) -> RunReport:
    world, outcome = simulate_batch(config, [run_index], shock_override)
    return _reports(config, world, outcome)[0]


def run_batch(config: ScenarioConfig, run_indices=None, shock_override=None) -> list[RunReport]:
    idx = range(config.runs) if run_indices is None else run_indices
    world, outcome = simulate_batch(config, idx, shock_override)
    return _reports(config, world, outcome)


def mean_ci(values) -> dict:
    """Mean, sample std (n - 1) and normal 95% CI; needs >= 2 values."""
    v = [float(x) for x in values]
    n = len(v)
    if n < 2:
        raise InvalidArgument("a confidence interval needs at least 2 runs")
    mean = math.fsum(v) / n
    std = math.sqrt(math.fsum((x - mean) ** 2 for x in v) / (n - 1))
    half = Z95 * std / math.sqrt(n)
    return {"mean": mean, "std": std, "ci_low": mean - half, "ci_high": mean + half, "n": n}


def aggregate(reports) -> dict:
    """metric -> {mean, std, ci_low, ci_high, n}; independent of report order."""
    reports = sorted(reports, key=lambda r: r.run_index)
    if len(reports) < 2:
        raise InvalidArgument("a confidence interval needs at least 2 runs")
    out = {}
    for name in reports[0].metrics:
        vals = [r.metrics[name] for r in reports]
        vals = [x for x in vals if math.isfinite(x)]
        if len(vals) >= 2:
            out[name] = mean_ci(sorted(vals))
    if reports[0].attack is not None:
        out["attack_success"] = mean_ci(sorted(float(r.attack["success"]) for r in reports))
        out["attacker_profit"] = mean_ci(sorted(r.attack["attacker_profit"] for r in reports))
        out["treasury_drain"] = mean_ci(sorted(r.attack["treasury_drain"] for r in reports))
    return out


def run_monte_carlo(config: ScenarioConfig, batch: int = 100, shock_override=None, reports: list | None = None) -> dict:
    """Aggregate report over ``config.runs`` runs, simulated ``batch`` at a time.

    Per-run reports are appended to ``reports`` when a list is given.
    """
    if config.runs < 2:
        raise InvalidArgument("a confidence interval needs at least 2 runs")
    done = []
    for start in range(0, config.runs, batch):
        done += run_batch(config, range(start, min(config.runs, start + batch)), shock_override)
    if reports is not None:
        reports.extend(done)
    return {"schema_version": SCHEMA_VERSION, "scenario": config.name, "policy": config.policy.name,
            "config_hash": config.hash(), "seed": config.seed, "runs": config.runs, "horizon": config.horizon,
            "metrics": aggregate(done)}


# serialization --------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def series_csv(reports) -> str:
    """One row per (run, epoch) with the time-series columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["run", "epoch", *SERIES])
    for rep in sorted(reports, key=lambda r: r.run_index):
        n = len(rep.series["price"])
        for k in range(n):
            w.writerow([rep.run_index, k, *(_fmt(rep.series[c][k]) for c in SERIES)])
    return buf.getvalue()


def metrics_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    names = list(reports[0].metrics) if reports else []
    w.writerow(["run", "seed", "config_hash", *names])
    for rep in sorted(reports, key=lambda r: r.run_index):
        w.writerow([rep.run_index, rep.seed, rep.config_hash, *(_fmt(rep.metrics[n]) for n in names)])
    return buf.getvalue()


def aggregate_json(agg: dict) -> str:
    return json.dumps(agg, sort_keys=True, indent=2, default=float)


def golden_config() -> ScenarioConfig:
    """Small reference scenario for byte-level reproducibility checks."""
    return scenario("custom", horizon=40, runs=3, seed=42)


def golden_csv() -> str:
    return series_csv(run_batch(golden_config()))


__all__ = [
    "AgentParams", "AttackSpec", "JumpDiffusionParams", "PolicySpec", "RunReport", "ScenarioConfig",
    "SCHEMA_VERSION", "aggregate", "aggregate_json", "golden_config", "golden_csv", "mean_ci", "metrics_csv",
    "run_batch", "run_monte_carlo", "run_once", "scenario", "series_csv", "simulate_batch", "validate_report",
]
