"""Command-line entry point: ``dcbm <command> [flags]``.

Exit status is 0 on success, 2 for usage or configuration errors and 3 when
a simulation fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg
from .analysis import ablation_study, jury_test
from .attacks import binomial_ci
from .errors import ConfigError, DCBMError, ParseError
from .harness import (AttackSpec, PolicySpec, SCENARIOS, aggregate, aggregate_json, metrics_csv, run_batch,
                      scenario, series_csv)
from .stochastic import replay_csv
from .tuning import tune_gains

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
DEFENSES = ("threshold", "dcbm", "dcbm_cert")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML scenario file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--runs", type=int, help="Monte Carlo runs (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="dcbm_out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    p = argparse.ArgumentParser(prog="dcbm", description="Buyback controller simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run a scenario")
    sim.add_argument("--scenario", choices=SCENARIOS, help="preset used when no config is given")
    sim.add_argument("--horizon", type=int, help="epochs per run (overrides the config)")
    sub.add_parser("ablate", parents=[common], help="P / PI / PD / PID step-disturbance study")
    att = sub.add_parser("attack", parents=[common], help="attack x defense matrix")
    att.add_argument("--defenses", default=",".join(DEFENSES), help="comma-separated policy names")
    sub.add_parser("tune", parents=[common], help="grid-search controller gains")
    sub.add_parser("stability", parents=[common], help="stability verdicts over a gain grid")
    sub.add_parser("replay", parents=[common], help="simulate with a CSV price series as the outside market")
    return p


def _raw(args) -> dict:
    return cfg.read_yaml(args.config) if args.config else {}


def _scenario(args, raw):
    c = cfg.parse_config(raw) if raw else scenario(getattr(args, "scenario", None) or "custom")
    if getattr(args, "horizon", None) is not None:
        if args.horizon < 1:
            raise ConfigError("--horizon", "must be >= 1")
        c = replace(c, horizon=args.horizon)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        c = replace(c, seed=args.seed)
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs", "must be >= 1")
        c = replace(c, runs=args.runs)
    return c


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="")
    print(out / name)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, c, reports):
    out = Path(args.out)
    if args.format == "csv":
        _write(out, "series.csv", series_csv(reports))
        _write(out, "metrics.csv", metrics_csv(reports))
    else:
        _write(out, "reports.json", json.dumps([json.loads(r.to_json()) for r in reports], indent=2))
    if len(reports) >= 2:
        agg = {"schema_version": reports[0].schema_version, "scenario": c.name, "policy": c.policy.name,
               "config_hash": c.hash(), "seed": c.seed, "runs": c.runs, "horizon": c.horizon,
               "metrics": aggregate(reports)}
        _write(out, "aggregate.json", aggregate_json(agg))


def cmd_simulate(args):
    raw = _raw(args)
    c = _scenario(args, raw)
    _emit(args, c, run_batch(c))


def cmd_replay(args):
    raw = _raw(args)
    if not raw:
        raise ConfigError("--config", "replay needs a config with a replay section")
    src = cfg.replay_source(raw)
    path = Path(src["path"])
    if not path.is_absolute():
        path = Path(args.config).parent / path
    inc = replay_csv(path, src.get("column", "price"), src.get("timestamp_column", "timestamp"))
    c = _scenario(args, raw)
    c = replace(c, horizon=min(c.horizon, inc.size))
    _emit(args, c, run_batch(c, shock_override=inc))


def cmd_ablate(args):
    spec = cfg.ablation_spec(_raw(args), args.seed, args.runs)
    res = ablation_study(spec)
    rows = []
    for name, metrics in res.items():
        for m, v in metrics.items():
            half = 1.959963984540054 * v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
            rows.append([name, m, repr(float(v.mean())), repr(float(v.mean() - half)), repr(float(v.mean() + half))])
    if args.format == "csv":
        _write(Path(args.out), "ablation.csv", _table(["config", "metric", "mean", "ci_low", "ci_high"], rows))
    else:
        data = {f"{r[0]}.{r[1]}": {"mean": float(r[2]), "ci_low": float(r[3]), "ci_high": float(r[4])} for r in rows}
        _write(Path(args.out), "ablation.json", json.dumps(data, indent=2, sort_keys=True))


def cmd_attack(args):
    raw = _raw(args)
    c = _scenario(args, raw)
    if c.attack is None:
        c = replace(c, attack=AttackSpec())
    rows = []
    for name in [d.strip() for d in args.defenses.split(",") if d.strip()]:
        if name not in DEFENSES:
            raise ConfigError("--defenses", f"unknown defense {name!r}")
        params = dict(c.policy.params) if name == c.policy.name else {}
        reports = run_batch(replace(c, policy=PolicySpec.of(name, **params)))
        s = sum(r.attack["success"] for r in reports)
        n = len(reports)
        lo, hi = binomial_ci(s, n)
        profit = float(np.mean([r.attack["attacker_profit"] for r in reports]))
        drain = float(np.mean([r.attack["treasury_drain"] for r in reports]))
        rows.append([c.attack.kind, c.attack.eps, name, n, s, s / n, 1 - s / n, lo, hi, profit, drain])
    header = ["attack", "eps", "defense", "trials", "successes", "asr", "robustness", "ci_low", "ci_high",
              "mean_profit", "mean_drain"]
    if args.format == "csv":
        _write(Path(args.out), "attack.csv", _table(header, [[repr(x) if isinstance(x, float) else x for x in r]
                                                            for r in rows]))
    else:
        _write(Path(args.out), "attack.json", json.dumps([dict(zip(header, r)) for r in rows], indent=2))


def cmd_tune(args):
    raw = _raw(args)
    c = _scenario(args, raw)
    spec, mode = cfg.tuning_spec(raw, args.seed)
    if args.runs is not None:
        spec = replace(spec, runs=args.runs)
    report = []
    best = tune_gains(spec, c.world, mode, report)
    rows = [[g.kp, g.ki, g.kd, a, ok, loss] for g, a, ok, loss in report]
    header = ["kp", "ki", "kd", "alpha", "feasible", "loss"]
    if args.format == "csv":
        _write(Path(args.out), "tuning.csv", _table(header, [[repr(float(x)) if not isinstance(x, bool) else x
                                                            for x in r] for r in rows]))
    else:
        _write(Path(args.out), "tuning.json", json.dumps({"best": [best.kp, best.ki, best.kd], "mode": mode,
                                                          "grid": [dict(zip(header, r)) for r in rows]}, indent=2))
    print(f"best gains: kp={best.kp!r} ki={best.ki!r} kd={best.kd!r}")


def cmd_stability(args):
    raw = _raw(args)
    if not raw:
        raise ConfigError("--config", "stability needs a config with a stability section")
    alpha, grid = cfg.stability_grid(raw)
    header = ["kp", "ki", "kd", "alpha", "stable", "max_root", "inequality_stable", "causal_stable"]
    rows = []
    for g in grid:
        v = jury_test(g, alpha)
        rows.append([g.kp, g.ki, g.kd, alpha, v.stable, v.max_magnitude, v.inequality_stable, v.causal_stable])
    if args.format == "csv":
        _write(Path(args.out), "stability.csv", _table(header, [[repr(x) if isinstance(x, float) else x for x in r]
                                                                for r in rows]))
    else:
        _write(Path(args.out), "stability.json", json.dumps([dict(zip(header, r)) for r in rows], indent=2))


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "ablate": cmd_ablate, "attack": cmd_attack,
            "tune": cmd_tune, "stability": cmd_stability}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DCBMError, ArithmeticError, ValueError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
