"""Agent population: users, compute operators, leveraged speculators, model owners.

All behaviour is rule based and vectorised over a batch of runs; arrays have
shape ``(runs, n_agents)``. Randomness is used only when a population is
created (heterogeneous costs, leverage, thresholds) so that a run's agents
depend on its own seed alone.

Token flows go through the pool passed in by the caller; this module never
touches reserves directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import amm
from .errors import InvalidArgument, UndefinedInput


@dataclass(frozen=True)
class AgentParams:
    n_operators: int = 50
    n_users: int = 200
    n_speculators: int = 20
    n_model_owners: int = 10

    # users
    base_demand: float = 30_000.0      # requests per epoch, whole population
    elasticity: float = 0.5
    protocol_fee: float = 0.02         # share of request value paid to the treasury
    reference_price: float = 1.0

    # operators
    capacity_per_operator: float = 900.0
    emission: float = 3_300.0          # tokens minted per epoch for active operators
    sell_fraction: float = 0.9         # share of token income sold each epoch
    cost_low: float = 300.0            # per-operator running cost range, stablecoin/epoch
    cost_high: float = 560.0
    profit_smoothing: float = 0.1
    exit_threshold: float = 0.0
    patience: int = 20

    # speculators
    speculator_stake: float = 0.75    # total position, fraction of the initial token reserve
    margin_low: float = 0.02           # liquidation distance below entry
    margin_high: float = 0.15
    reentry_premium_low: float = 0.0   # re-enter when price exceeds MA by this much
    reentry_premium_high: float = 0.03
    momentum: float = 0.0              # extra buy/sell per unit of MA deviation, fraction of stake
    cooldown_low: int = 20             # epochs a liquidated speculator waits before re-entry
    cooldown_high: int = 120
    trade_rate: float = 0.25           # share of the stake a speculator trades per epoch
    cascade_passes: int = 3

    # model owners
    deploy_threshold_low: float = 0.0005
    deploy_threshold_high: float = 0.003
    deploy_cooldown: int = 50
    demand_per_model: float = 0.002    # demand uplift per deployed model
    initial_models: int = 2

    def __post_init__(self):
        for name in ("n_operators", "n_users", "n_speculators", "n_model_owners"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if not 0.0 <= self.protocol_fee < 1.0:
            raise InvalidArgument("protocol_fee must lie in [0, 1)")
        if not 0.0 <= self.sell_fraction <= 1.0:
            raise InvalidArgument("sell_fraction must lie in [0, 1]")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")


def gini(balances) -> float:
    """Gini coefficient sum|b_i - b_j| / (2 n^2 mean) along the last axis."""
    b = np.asarray(balances, dtype=float)
    if np.any(b < 0):
        raise InvalidArgument("balances must be >= 0")
    if b.shape[-1] == 0 or np.any(np.sum(b, axis=-1) <= 0):
        raise UndefinedInput("gini needs at least one positive balance")
    n = b.shape[-1]
    s = np.sort(b, axis=-1)
    i = np.arange(1, n + 1)
    # sorted form of the mean absolute difference
    return np.sum((2 * i - n - 1) * s, axis=-1) / (n * np.sum(s, axis=-1))


def innovation_rate(new_models, total_models) -> float:
    total = np.asarray(total_models, dtype=float)
    if np.any(total < 1):
        raise UndefinedInput("innovation rate needs at least one deployed model")
    return np.asarray(new_models, dtype=float) / total


def churn_update(profit_ewma, bad_streak, active, exit_threshold, patience):
    """Advance the exit rule one epoch.

    An active operator whose smoothed profit is below ``exit_threshold`` for
    ``patience`` consecutive epochs leaves. Returns (bad_streak', active',
    exits) where ``exits`` flags operators leaving this epoch.
    """
    bad = np.logical_and(active, profit_ewma < exit_threshold)
    streak = np.where(bad, bad_streak + 1, 0)
    exits = np.logical_and(active, streak >= patience)
    return streak, np.logical_and(active, ~exits), exits


class Population:
    """Agent state for a batch of runs."""

    def __init__(self, params: AgentParams, runs: int, x0: float, generators):
        p = self.params = params
        self.runs = runs
        nO, nS, nM = p.n_operators, p.n_speculators, p.n_model_owners

        def draw(lo, hi, n):
            return np.stack([g.uniform(lo, hi, n) for g in generators]) if n else np.zeros((runs, 0))

        self.op_cost = draw(p.cost_low, p.cost_high, nO)
        self.op_tokens = np.zeros((runs, nO))
        self.op_stable = np.zeros((runs, nO))
        self.op_active = np.ones((runs, nO), dtype=bool)
        self.op_profit = np.full((runs, nO), 0.0)
        self.op_bad = np.zeros((runs, nO), dtype=np.int64)
        self.initial_operators = nO

        stake = p.speculator_stake * x0 / max(nS, 1)
        self.sp_size = np.full((runs, nS), stake)
        self.sp_margin = draw(p.margin_low, p.margin_high, nS)
        self.sp_premium = draw(p.reentry_premium_low, p.reentry_premium_high, nS)
        self.sp_tokens = np.full((runs, nS), stake)
        self.sp_stable = np.zeros((runs, nS))
        self.sp_entry = np.ones((runs, nS))
        self.sp_active = np.ones((runs, nS), dtype=bool)
        self.sp_cooldown = draw(p.cooldown_low, p.cooldown_high, nS)
        self.sp_exit_epoch = np.full((runs, nS), -10**9, dtype=np.int64)
        self.speculator_tokens0 = stake * nS

        self.mo_threshold = draw(p.deploy_threshold_low, p.deploy_threshold_high, nM)
        self.mo_models = np.zeros((runs, nM), dtype=np.int64)
        if nM:
            self.mo_models[:, 0] = p.initial_models
        self.mo_last = np.full((runs, nM), -10**9, dtype=np.int64)
        self.revenue_trend = np.zeros(runs)
        self._prev_log_rev = None

    # ------------------------------------------------------------------
    @property
    def deployed_models(self):
        return self.mo_models.sum(axis=1)

    def holdings(self):
        """Token balances of all agents, (runs, n_operators + n_speculators)."""
        return np.concatenate([self.op_tokens, self.sp_tokens], axis=1)

    def capacity(self):
        return self.op_active.sum(axis=1) * self.params.capacity_per_operator

    def served_demand(self, demand, price):
        p = self.params
        want = demand * (1.0 + p.demand_per_model * self.deployed_models) \
            * (p.reference_price / price) ** p.elasticity
        return np.minimum(want, self.capacity())

    # ------------------------------------------------------------------
    def step_users(self, pool, demand):
        """Users pay the protocol fee in stablecoin and buy tokens for operators.

        Returns (R_acc, served, tokens_bought).
        """
        p = self.params
        P = pool.price
        served = self.served_demand(demand, P)
        value = served * P
        R_acc = p.protocol_fee * value
        spend = (1.0 - p.protocol_fee) * value
        tokens = pool.buy_tokens(spend)
        n_active = self.op_active.sum(axis=1)
        share = np.where(n_active > 0, tokens / np.maximum(n_active, 1), 0.0)
        self._income = share[:, None] * self.op_active
        self.op_tokens += self._income
        return R_acc, served, tokens

    def step_operators(self, pool, epoch):
        """Emissions, token sales, costs, profit tracking and churn.

        Returns (minted, exits) with ``exits`` the per-run count of operators
        leaving this epoch.
        """
        p = self.params
        n_active = self.op_active.sum(axis=1)
        per = np.where(n_active > 0, p.emission / np.maximum(n_active, 1), 0.0)
        mint = per[:, None] * self.op_active
        minted = mint.sum(axis=1)
        self.op_tokens += mint
        income = self._income + mint

        sell = p.sell_fraction * income
        total = sell.sum(axis=1)
        got = pool.sell_tokens(total)
        frac = np.where(total > 0, got / np.where(total > 0, total, 1.0), 0.0)
        self.op_tokens -= sell
        self.op_stable += sell * frac[:, None]
        cost = self.op_cost * self.op_active
        self.op_stable -= cost

        P = pool.price
        profit = income * P[:, None] - cost
        a = p.profit_smoothing
        self.op_profit = np.where(self.op_active, a * profit + (1 - a) * self.op_profit, self.op_profit)
        self.op_bad, active, exits = churn_update(self.op_profit, self.op_bad, self.op_active,
                                                  p.exit_threshold, p.patience)
        self.op_active = active
        # leavers liquidate their token holdings
        dump = np.where(exits, self.op_tokens, 0.0)
        total = dump.sum(axis=1)
        got = pool.sell_tokens(total)
        frac = np.where(total > 0, got / np.where(total > 0, total, 1.0), 0.0)
        self.op_tokens -= dump
        self.op_stable += dump * frac[:, None]
        return minted, exits.sum(axis=1)

    def step_speculators(self, pool, ma, epoch=0):
        """Liquidations, then trend-following re-entry.

        A position whose price falls ``margin`` below entry is closed. Closing
        and re-entering both trade at most ``trade_rate`` of the stake per
        epoch, so a cascade plays out over several epochs.

        Returns (tokens_sold, tokens_bought, liquidations).
        """
        p = self.params
        step = p.trade_rate * self.sp_size
        sold = np.zeros(self.runs)
        liquidations = np.zeros(self.runs, dtype=np.int64)
        for i in range(p.cascade_passes):
            P = pool.price
            hit = self.sp_active & (P[:, None] < self.sp_entry * (1.0 - self.sp_margin))
            if i and not hit.any():
                break
            self.sp_active &= ~hit
            self.sp_exit_epoch = np.where(hit, epoch, self.sp_exit_epoch)
            liquidations += hit.sum(axis=1)
            # closing positions sell one tranche; newly hit ones start now
            closing = (~self.sp_active) & (self.sp_tokens > 0)
            if i:
                closing &= hit
            amount = np.where(closing, np.minimum(self.sp_tokens, step), 0.0)
            total = amount.sum(axis=1)
            got = pool.sell_tokens(total)
            frac = np.where(total > 0, got / np.where(total > 0, total, 1.0), 0.0)
            self.sp_tokens -= amount
            self.sp_stable += amount * frac[:, None]
            sold += total

        P = pool.price
        rested = (epoch - self.sp_exit_epoch) >= self.sp_cooldown
        flat = self.sp_tokens <= 0
        enter = ~self.sp_active & rested & flat & (P[:, None] > ma[:, None] * (1.0 + self.sp_premium))
        self.sp_active |= enter
        self.sp_entry = np.where(enter, P[:, None], self.sp_entry)
        # active positions below full size keep buying
        want = np.where(self.sp_active, np.clip(self.sp_size - self.sp_tokens, 0.0, step), 0.0)
        total = want.sum(axis=1)
        # never try to take more than half the pool's tokens in one epoch
        scale = np.minimum(1.0, 0.5 * pool.x / np.where(total > 0, total, 1.0))
        want = want * scale[:, None]
        total = total * scale
        cost = pool.stable_for_tokens(total)
        got = pool.buy_tokens(cost)
        frac = np.where(total > 0, got / np.where(total > 0, total, 1.0), 0.0)
        self.sp_tokens += want * frac[:, None]
        self.sp_stable -= np.where(total > 0, cost / np.where(total > 0, total, 1.0), 0.0)[:, None] * want
        bought = got
        if p.momentum:
            # proportional trend trading by active speculators, bounded by stake
            dev = np.clip(np.log(pool.price / ma), -0.2, 0.2)
            q = p.momentum * dev[:, None] * self.sp_size * self.sp_active
            q = np.clip(q, -self.sp_tokens, 2 * self.sp_size - self.sp_tokens)
            buy = np.where(q > 0, q, 0.0).sum(axis=1)
            sell = np.where(q < 0, -q, 0.0).sum(axis=1)
            c = pool.stable_for_tokens(buy)
            b = pool.buy_tokens(c)
            s = pool.sell_tokens(sell)
            fb = np.where(buy > 0, b / np.where(buy > 0, buy, 1.0), 0.0)
            self.sp_tokens += np.where(q > 0, q * fb[:, None], q)
            avg_sell = np.where(sell > 0, s / np.where(sell > 0, sell, 1.0), 0.0)
            avg_buy = np.where(buy > 0, c / np.where(buy > 0, buy, 1.0), 0.0)
            self.sp_stable += np.where(q < 0, -q * avg_sell[:, None], -q * avg_buy[:, None])
            sold += sell
            bought = bought + b
        return sold, bought, liquidations

    def step_model_owners(self, R_acc, epoch):
        """Deploy a model when the revenue trend clears an owner's threshold.

        Returns the number of new deployments per run.
        """
        p = self.params
        log_rev = np.log(np.maximum(R_acc, 1e-12))
        if self._prev_log_rev is not None:
            self.revenue_trend = 0.9 * self.revenue_trend + 0.1 * (log_rev - self._prev_log_rev)
        self._prev_log_rev = log_rev
        ready = (epoch - self.mo_last) >= p.deploy_cooldown
        deploy = ready & (self.revenue_trend[:, None] > self.mo_threshold)
        self.mo_models += deploy
        self.mo_last = np.where(deploy, epoch, self.mo_last)
        return deploy.sum(axis=1)


def step_population(pop: Population, demand, pool, epoch: int, ma):
    """Users, operators, speculators and model owners in that order.

    Returns (R_acc, events) where events holds per-run arrays.
    """
    R_acc, served, bought = pop.step_users(pool, demand)
    minted, exits = pop.step_operators(pool, epoch)
    sold, sp_bought, liq = pop.step_speculators(pool, ma, epoch)
    new_models = pop.step_model_owners(R_acc, epoch)
    return R_acc, {
        "served": served, "minted": minted, "exits": exits,
        "speculator_sold": sold, "speculator_bought": sp_bought,
        "liquidations": liq, "new_models": new_models,
    }
