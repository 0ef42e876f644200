import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcbm.errors import InvalidArgument
from dcbm.policies import (
    DCBM, POLICIES, FixedRate, MPCOracle, NoBuyback, Observation, Threshold, dcbm_cert, fixed_rate,
    mpc_oracle, no_buyback, threshold,
)


def obs(twap=1.0, ma=1.0, T=1000.0, R=0.0, y=1000.0):
    return Observation(0, twap, ma, T, R, y)


def brute_mpc(p0, target, alpha, xi, grid, T, w):
    """Independent oracle: loop over every plan with plain Python floats."""
    best, best_cost = None, math.inf
    for plan in itertools.product(grid, repeat=len(xi)):
        if sum(plan) > T * (1 + 1e-12):
            continue
        p, cost = p0, 0.0
        for J, x in zip(plan, xi):
            p = p + alpha * J + x
            cost += (target - p) ** 2 + w * (alpha * J) ** 2
        if cost < best_cost:
            best, best_cost = plan, cost
    return best[0]


def test_no_buyback():
    assert no_buyback(obs()) == 0
    assert no_buyback(obs(twap=0.2)) == 0
    assert no_buyback(obs(T=1e9)) == 0


def test_fixed_rate_examples():
    assert fixed_rate(obs(R=10.0), 0.5) == 5.0
    assert fixed_rate(obs(R=0.0), 0.5) == 0.0
    assert fixed_rate(obs(R=10.0), 0.0) == 0.0
    with pytest.raises(InvalidArgument):
        fixed_rate(obs(), 1.5)
    with pytest.raises(InvalidArgument):
        FixedRate(-0.1)


def test_threshold_examples():
    assert threshold(obs(twap=0.9), 0.05) == pytest.approx(50.0)
    assert threshold(obs(twap=1.1), 0.05) == 0.0
    assert threshold(obs(twap=1.0), 0.05) == 0.0
    assert threshold(obs(twap=0.95), 0.05, hysteresis=0.1) == 0.0


def test_mpc_flat_market_spends_nothing():
    assert mpc_oracle(obs(), 3, [0.0, 0.0, 0.0], [0.0, 10.0, 50.0]) == 0.0


def test_mpc_zero_treasury():
    assert mpc_oracle(obs(twap=0.5, T=0.0), 2, [0.0, 0.0], [0.0, 10.0]) == 0.0


@given(st.floats(0.5, 1.5), st.lists(st.floats(-0.05, 0.05), min_size=1, max_size=1))
def test_mpc_h1_matches_single_step_argmin(twap, xi):
    grid = [0.0, 20.0, 60.0, 150.0]
    got = mpc_oracle(obs(twap=twap), 1, xi, grid)
    assert got == brute_mpc(math.log(twap), 0.0, 2 / 1000.0, xi, grid, 1000.0, 0.1)


@given(st.floats(0.5, 1.5), st.lists(st.floats(-0.05, 0.05), min_size=2, max_size=2), st.floats(0, 300))
def test_mpc_h2_matches_nine_plans(twap, xi, T):
    grid = [0.0, 40.0, 120.0]
    got = mpc_oracle(obs(twap=twap, T=T), 2, xi, grid)
    want = brute_mpc(math.log(twap), 0.0, 2 / 1000.0, xi, grid, T, 0.1) if T > 0 else 0.0
    assert got == want


def test_mpc_argument_errors():
    with pytest.raises(InvalidArgument):
        mpc_oracle(obs(), 5, [0.0] * 5, [0.0])
    with pytest.raises(InvalidArgument):
        mpc_oracle(obs(), 2, [0.0], [0.0, 1.0])
    with pytest.raises(InvalidArgument):
        mpc_oracle(obs(), 1, [0.0], list(range(8)))


def realized_cost(policy_fn, p0, alpha, n):
    p, cost = p0, 0.0
    for _ in range(n):
        J = policy_fn(p)
        p = p + alpha * J
        cost += p * p
    return cost


def test_mpc_beats_fixed_policies_on_noise_free_plant():
    grid = [0.0, 50.0, 100.0, 200.0]
    alpha = 2 / 1000.0
    n = 3
    mpc = realized_cost(lambda p: mpc_oracle(Observation(0, math.exp(p), 1.0, 1e9, 0, 1000.0), 3,
                                             [0.0, 0.0, 0.0], grid, 0.0), -0.8, alpha, n)
    for J in grid:
        assert mpc <= realized_cost(lambda p: J, -0.8, alpha, n) + 1e-12


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0, 1e6), st.floats(0, 1e4))
def test_every_policy_is_solvent(twap, ma, T, R):
    o = obs(twap=twap, ma=ma, T=T, R=R)
    for make in (NoBuyback, FixedRate, Threshold, DCBM, dcbm_cert):
        pol = make()
        pol.reset(1)
        J = float(np.asarray(pol.decide(o)))
        assert 0.0 <= J <= T + R + 1e-9


def test_policy_registry():
    assert set(POLICIES) == {"no_buyback", "fixed_rate", "threshold", "mpc_oracle", "dcbm", "dcbm_cert"}
    assert MPCOracle().needs_foresight == 3
    assert dcbm_cert().cert.enabled and not DCBM().cert.enabled
