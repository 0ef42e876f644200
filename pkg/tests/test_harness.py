import json
import math
import random
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dcbm.config import load_config, parse_config
from dcbm.errors import ConfigError, InvalidArgument
from dcbm.harness import (
    SCHEMA_VERSION, AttackSpec, PolicySpec, RunReport, aggregate, golden_csv, mean_ci, run_batch,
    run_monte_carlo, run_once, scenario, series_csv, validate_report,
)

GOLDEN = Path(__file__).parent / "golden" / "seed42.csv"


def small(name="custom", **kw):
    return scenario(name, horizon=kw.pop("horizon", 30), runs=kw.pop("runs", 3), seed=kw.pop("seed", 42), **kw)


def test_run_once_is_reproducible():
    c = small()
    a, b = run_once(c, 1), run_once(c, 1)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    assert a.config_hash == c.hash() and a.schema_version == SCHEMA_VERSION


def test_run_once_matches_batch_member():
    c = small()
    assert run_once(c, 2).to_csv().splitlines()[1:] == [
        line for line in series_csv(run_batch(c)).splitlines() if line.startswith("2,")]


def test_no_buyback_spends_nothing():
    r = run_once(small().with_policy("no_buyback"), 0)
    assert np.sum(r.series["J"]) == 0


def test_horizon_one():
    r = run_once(small(horizon=1), 0)
    assert len(r.series["price"]) == 1
    assert len(r.to_csv().splitlines()) == 2


def test_golden_file():
    assert golden_csv().encode() == GOLDEN.read_bytes()


def test_mean_ci_formula():
    v = [1.0, 2.0, 3.0]
    ci = mean_ci(v)
    half = 1.959963984540054 * 1.0 / math.sqrt(3)
    assert ci["mean"] == 2.0 and ci["std"] == 1.0
    assert ci["ci_low"] == pytest.approx(2 - half) and ci["ci_high"] == pytest.approx(2 + half)
    flat = mean_ci([5.0, 5.0])
    assert flat["ci_low"] == flat["ci_high"] == 5.0
    with pytest.raises(InvalidArgument):
        mean_ci([1.0])


def test_aggregate_is_order_independent():
    reps = run_batch(small(runs=6))
    shuffled = reps[:]
    random.Random(0).shuffle(shuffled)
    assert aggregate(reps) == aggregate(shuffled)


def test_monte_carlo_batches_do_not_matter():
    c = small(runs=5)
    assert run_monte_carlo(c, batch=2) == run_monte_carlo(c, batch=5)
    with pytest.raises(InvalidArgument):
        run_monte_carlo(replace(c, runs=1))


def test_attack_outcomes_are_reported():
    c = replace(small(runs=4, horizon=20), attack=AttackSpec("fgsm_flash", 0.01, warmup=5))
    reps = run_batch(c)
    assert all(set(r.attack) == {"attacker_profit", "success", "treasury_drain", "deviation"} for r in reps)
    assert "attack_success" in aggregate(reps)


def test_config_hash_changes_with_config():
    assert small().hash() != small(seed=43).hash()
    assert small().hash() == small().hash()


def test_presets():
    for name in ("bull", "bear", "high_vol", "demand_shock_pos", "demand_shock_neg", "liquidity_crisis"):
        assert scenario(name).name == name
    assert scenario("bull").world.demand.mu > 0 > scenario("bear").world.demand.mu
    assert scenario("liquidity_crisis", horizon=100).world.liquidity_epoch == 50
    with pytest.raises(InvalidArgument):
        scenario("sideways")


def test_policy_spec():
    assert PolicySpec.of("dcbm", kp=5.0).build().gains.kp == 5.0
    assert PolicySpec.of("threshold", spend_fraction=0.1).build().spend_fraction == 0.1
    with pytest.raises(InvalidArgument):
        PolicySpec("rl")


def test_yaml_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scenario: bear\nseed: 7\nruns: 4\nhorizon: 50\npolicy: {name: dcbm_cert, kp: 10}\n"
                 "treasury: {T0: 1000}\nstochastic: {shock: {sigma: 0.02}}\n")
    c = load_config(p)
    assert (c.name, c.seed, c.runs, c.horizon) == ("bear", 7, 4, 50)
    assert c.world.T0 == 1000 and c.world.shock.sigma == 0.02 and c.world.demand.mu < 0
    assert c.policy.build().cert.enabled


@pytest.mark.parametrize("raw,key", [
    ({"polcy": {}}, "polcy"),
    ({"pool": {"x": -1}}, "pool.x"),
    ({"pool": {"z": 1}}, "pool.z"),
    ({"runs": 0}, "runs"),
    ({"seed": "a"}, "seed"),
    ({"policy": {"name": "rl"}}, "policy.name"),
    ({"agents": {"n_operators": 2.5}}, "agents.n_operators"),
    ({"treasury": {"mode": "x"}}, "treasury.mode"),
    ({"stochastic": {"shock": {"sigma": -1}}}, "stochastic.shock"),
    ({"attack": {"kind": "nuke"}}, "attack"),
])
def test_config_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError) as e:
        parse_config(raw)
    assert e.value.key == key


def test_report_json_roundtrip():
    r = run_once(small(), 0)
    d = json.loads(r.to_json())
    assert d["schema_version"] == SCHEMA_VERSION and d["run_index"] == 0
    assert isinstance(r, RunReport)
    validate_report(d)
    with pytest.raises(InvalidArgument):
        validate_report({**d, "extra": 1})
    with pytest.raises(InvalidArgument):
        validate_report({**d, "schema_version": SCHEMA_VERSION + 1})
