from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcbm.agents import AgentParams, Population, churn_update, gini, innovation_rate, step_population
from dcbm.amm import BatchPool
from dcbm.errors import InvalidArgument, UndefinedInput
from dcbm.policies import DCBM, NoBuyback
from dcbm.world import World, WorldParams


def gini_pairwise(b):
    """Independent oracle: the double sum definition."""
    b = np.asarray(b, dtype=float)
    n = b.size
    return np.abs(b[:, None] - b[None, :]).sum() / (2 * n * n * b.mean())


def population(runs=1, **kw):
    p = AgentParams(**kw)
    gens = [np.random.default_rng(i) for i in range(runs)]
    return Population(p, runs, 1_000_000.0, gens)


def test_gini_examples():
    assert gini([3.0, 3.0, 3.0]) == 0.0
    assert gini([0.0, 0.0, 10.0]) == pytest.approx(2 / 3)
    assert gini([0, 0, 0, 0, 7.0]) == pytest.approx(4 / 5)
    with pytest.raises(UndefinedInput):
        gini([0.0, 0.0])
    with pytest.raises(InvalidArgument):
        gini([1.0, -1.0])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40).filter(lambda v: sum(v) > 1e-3))
def test_gini_matches_pairwise_and_below_one(b):
    g = gini(b)
    assert 0.0 <= g < 1.0
    assert g == pytest.approx(gini_pairwise(b), rel=1e-9, abs=1e-12)


def test_innovation_rate_examples():
    assert innovation_rate(0, 10) == 0.0
    assert innovation_rate(2, 10) == pytest.approx(0.2)
    with pytest.raises(UndefinedInput):
        innovation_rate(1, 0)


def trace(profits, threshold=0.0, patience=5):
    streak, active = np.zeros(1, dtype=int), np.ones(1, dtype=bool)
    exits_at = []
    for k, p in enumerate(profits, start=1):
        streak, active, ex = churn_update(np.array([p]), streak, active, threshold, patience)
        if ex[0]:
            exits_at.append(k)
    return exits_at, active[0]


def test_churn_all_profitable():
    assert trace([1.0] * 30) == ([], True)


def test_churn_exit_after_patience():
    assert trace([-1.0] * 5 + [1.0] * 5) == ([5], False)


def test_churn_recovers_one_short():
    assert trace([-1.0] * 4 + [1.0] + [-1.0] * 4) == ([], True)


def test_churn_no_reentry():
    exits, active = trace([-1.0] * 5 + [5.0] * 20)
    assert exits == [5] and not active


def test_fee_rule_example():
    pop = population(protocol_fee=0.02, demand_per_model=0.0, n_speculators=0)
    pool = BatchPool(1, 1_000_000.0, 1_000_000.0, 0.003)
    R, served, _ = pop.step_users(pool, np.array([100.0]))
    assert served[0] == pytest.approx(100.0)
    assert R[0] == pytest.approx(2.0)


def test_zero_demand_flat_price():
    pop = population(n_speculators=5)
    pool = BatchPool(1, 1_000_000.0, 1_000_000.0, 0.003)
    R, ev = step_population(pop, np.array([0.0]), pool, 0, pool.price.copy())
    assert R[0] == 0.0
    assert ev["speculator_sold"][0] == 0.0 and ev["speculator_bought"][0] == 0.0


def test_no_operators_no_revenue():
    pop = population(n_operators=0)
    pool = BatchPool(1, 1_000_000.0, 1_000_000.0, 0.003)
    R, _, _ = pop.step_users(pool, np.array([1000.0]))
    assert R[0] == 0.0


def test_token_conservation_every_epoch():
    w = World(WorldParams(), DCBM(), 300, 5, range(4))
    for _ in range(300):
        w.step()
        assert np.all(w.token_balance_error() < 1e-9)


def test_churn_monotone_in_revenue():
    base = WorldParams(shock=replace(WorldParams().shock, sigma=0.0, jump_rate=0.0),
                       demand=replace(WorldParams().demand, sigma=0.0))
    rich = World(base, NoBuyback(), 200, 3, range(6)).run()
    poor_agents = replace(base.agents, base_demand=0.6 * base.agents.base_demand)
    poor = World(replace(base, agents=poor_agents), NoBuyback(), 200, 3, range(6)).run()
    assert np.all(poor.exits_total >= rich.exits_total)
    assert poor.exits_total.sum() > rich.exits_total.sum()
