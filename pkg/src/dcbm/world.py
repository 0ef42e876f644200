"""Closed-loop market simulation, vectorised across Monte Carlo runs.

One epoch, in order:

1. scripted events (demand jump, liquidity withdrawal)
2. agents trade: users, operators, speculators
3. outside market: a fee-free trade moves ln P by the epoch's shock plus a
   pull of strength ``kappa`` toward the demand-driven fundamental price
4. block prices for the epoch are laid out geometrically between the opening
   and closing price; the TWAP is their mean
5. the moving-average target is updated, the policy picks J, the buyback
   executes and the treasury settles (revenue in, J and operating cost out)

Each run draws everything from ``RngStream(seed, run_index)``, so run r is
identical whether simulated alone or in a batch.

Attack code can observe or alter a step through ``hooks``:
``epoch_start(world)``, ``after_blocks(world)``, ``pre_buyback(world, J) -> J``
and ``post_buyback(world)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import AgentParams, Population, gini, step_population
from .amm import BatchPool
from .errors import InvalidArgument, SolvencyViolation
from .policies import Observation, Policy
from .stochastic import CorrelationSpec, JumpDiffusionParams, RngStream, gen_correlated
from .treasury import CONSERVATION, OPS_CLAMPED


@dataclass(frozen=True)
class WorldParams:
    x0: float = 1_000_000.0
    y0: float = 1_000_000.0
    fee_rate: float = 0.003
    buyback_fee: float = 0.0
    epoch_length: int = 50
    block_time: float = 12.0
    kappa: float = 0.03               # pull toward the fundamental per epoch
    fundamental_elasticity: float = 1.0
    T0: float = 200_000.0
    ops_cost: float = 250.0
    accounting_mode: str = OPS_CLAMPED
    ema_beta: float = 2.0 / 31.0
    demand: JumpDiffusionParams = field(default_factory=lambda: JumpDiffusionParams(0.0, 0.01, 0.0))
    shock: JumpDiffusionParams = field(default_factory=lambda: JumpDiffusionParams(0.0, 0.004, 0.005, 0.3, 25.0, 20.0))
    rho: float = 0.5
    demand_jump_epoch: int | None = None
    demand_jump: float = 0.0
    liquidity_epoch: int | None = None
    liquidity_fraction: float = 0.0
    agents: AgentParams = field(default_factory=AgentParams)

    def __post_init__(self):
        if not (self.x0 > 0 and self.y0 > 0):
            raise InvalidArgument("pool reserves must be positive")
        if self.T0 < 0 or self.ops_cost < 0:
            raise InvalidArgument("T0 and ops_cost must be >= 0")
        if self.accounting_mode not in (CONSERVATION, OPS_CLAMPED):
            raise InvalidArgument(f"unknown accounting_mode {self.accounting_mode!r}")
        if self.epoch_length < 1:
            raise InvalidArgument("epoch_length must be >= 1")
        if not 0.0 < self.ema_beta <= 1.0:
            raise InvalidArgument("ema_beta must lie in (0, 1]")
        if not 0.0 <= self.liquidity_fraction < 1.0:
            raise InvalidArgument("liquidity_fraction must lie in [0, 1)")
        CorrelationSpec(self.rho)


SERIES = ("price", "twap", "target", "error", "u", "J", "T", "burned", "exits", "R_acc")


class World:
    def __init__(self, params: WorldParams, policy: Policy, horizon: int, seed: int, run_indices,
                 record: bool = True):
        if horizon < 1:
            raise InvalidArgument("horizon must be >= 1")
        self.params = p = params
        self.policy = policy
        self.horizon = int(horizon)
        self.seed = int(seed)
        self.run_indices = np.asarray(list(run_indices), dtype=np.int64)
        R = self.runs = len(self.run_indices)
        if R < 1:
            raise InvalidArgument("need at least one run")
        self.hooks = {}
        self.record = record

        streams = [RngStream(self.seed, int(i)) for i in self.run_indices]
        extra = max(getattr(policy, "needs_foresight", 0), 0)
        n = self.horizon + extra
        env = [gen_correlated(p.demand, p.shock, CorrelationSpec(p.rho), n, s.child(0)) for s in streams]
        self.demand_inc = np.stack([d for d, _ in env], axis=1)   # (n, R)
        self.shock = np.stack([x for _, x in env], axis=1)
        gens = [s.child(1).generator for s in streams]

        self.pool = BatchPool(R, p.x0, p.y0, p.fee_rate, p.buyback_fee)
        self.pop = Population(p.agents, R, p.x0, gens)
        self.T = np.full(R, float(p.T0))
        self.log_demand = np.zeros(R)
        self.ma = self.pool.price.copy()
        self.k = 0
        self.external_tokens = np.zeros(R)
        self.minted = np.zeros(R)
        self.supply0 = p.x0 + self.pop.speculator_tokens0
        self.exits_total = np.zeros(R)
        self.new_models_total = np.zeros(R)
        self.spent = np.zeros(R)
        self.revenue = np.zeros(R)
        self.ops_paid = np.zeros(R)
        self.blocks = None
        self.twap = self.pool.price.copy()
        self.last_u = np.zeros(R)
        self.series = {name: np.zeros((self.horizon, R)) for name in SERIES} if record else None
        policy.reset(R)

    # ------------------------------------------------------------------
    def clone(self) -> World:
        return copy.deepcopy(self)

    def subset(self, idx) -> World:
        """Deep copy restricted to the runs in ``idx`` (policy memory included)."""
        w = self.clone()
        idx = np.asarray(idx)
        for name, v in list(vars(w).items()):
            if isinstance(v, np.ndarray) and v.ndim >= 1:
                if v.shape[0] == self.runs and name not in ("demand_inc", "shock"):
                    setattr(w, name, v[idx].copy())
                elif v.ndim == 2 and v.shape[1] == self.runs:
                    setattr(w, name, v[:, idx].copy())
        w.pool = self.pool.subset(idx)
        for name, v in list(vars(w.pop).items()):
            if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == self.runs:
                setattr(w.pop, name, v[idx].copy())
        w.pop.runs = len(idx)
        if w.series is not None:
            w.series = {k: v[:, idx].copy() for k, v in w.series.items()}
        _subset_state(w.policy, idx, self.runs)
        w.run_indices = self.run_indices[idx]
        w.runs = len(idx)
        return w

    def _hook(self, name, *args):
        fn = self.hooks.get(name)
        return fn(self, *args) if fn is not None else None

    @property
    def fundamental(self):
        return self.params.fundamental_elasticity * self.log_demand + np.log(self.params.y0 / self.params.x0)

    def token_balance_error(self):
        """Relative gap between tracked supply and the sum of all holdings."""
        supply = self.supply0 + self.minted - self.pool.cumulative_burned
        held = (self.pool.x + self.pool.fees_token + self.external_tokens
                + self.pop.op_tokens.sum(axis=1) + self.pop.sp_tokens.sum(axis=1))
        return np.abs(supply - held) / supply

    # ------------------------------------------------------------------
    def step(self):
        p = self.params
        k = self.k
        if k >= self.horizon:
            raise InvalidArgument("horizon exhausted")
        self._hook("epoch_start")
        pool = self.pool
        P_open = pool.price.copy()

        self.log_demand = self.log_demand + self.demand_inc[k]
        if p.demand_jump_epoch is not None and k == p.demand_jump_epoch:
            self.log_demand = self.log_demand + p.demand_jump
        if p.liquidity_epoch is not None and k == p.liquidity_epoch and p.liquidity_fraction > 0:
            dx, _ = pool.remove_liquidity(p.liquidity_fraction)
            self.external_tokens += dx

        demand = p.agents.base_demand * np.exp(self.log_demand)
        R_acc, events = step_population(self.pop, demand, pool, k, self.ma)
        self.minted += events["minted"]

        delta = self.shock[k] + p.kappa * (self.fundamental - np.log(pool.price))
        self.external_tokens += pool.shift_log_price(delta)

        P_close = pool.price
        frac = np.arange(1, p.epoch_length + 1) / p.epoch_length
        self.blocks = P_open[:, None] * (P_close / P_open)[:, None] ** frac[None, :]
        self._hook("after_blocks")
        self.twap = self.blocks.mean(axis=1)

        self.ma = p.ema_beta * self.twap + (1.0 - p.ema_beta) * self.ma
        foresight = None
        need = getattr(self.policy, "needs_foresight", 0)
        if need:
            foresight = self.shock[k + 1:k + 1 + need].T
        obs = Observation(k, self.twap, self.ma, self.T.copy(), R_acc, pool.y.copy(), foresight)
        J = np.asarray(self.policy.decide(obs), dtype=float)
        J = np.broadcast_to(J, (self.runs,)).copy()
        hooked = self._hook("pre_buyback", J)
        if hooked is not None:
            J = np.asarray(hooked, dtype=float)
        if np.any(J < 0) or np.any(J > self.T + R_acc + 1e-9 * (1 + self.T)):
            raise SolvencyViolation(f"epoch {k}: policy spend outside [0, T + R]")
        burned = pool.buyback(J)
        gross = self.T + R_acc - J
        if p.accounting_mode == OPS_CLAMPED:
            paid = np.minimum(p.ops_cost, np.maximum(gross, 0.0))
            self.T = np.maximum(gross - p.ops_cost, 0.0)
        else:
            paid = np.zeros(self.runs)
            self.T = gross
        self.ops_paid += paid
        self.spent += J
        self.revenue += R_acc
        self.exits_total += events["exits"]
        self.new_models_total += events["new_models"]
        u = getattr(self.policy, "last_u", None)
        self.last_u = np.zeros(self.runs) if u is None else np.broadcast_to(u, (self.runs,))
        self.last_J = J
        self.last_R = R_acc
        self.last_events = events
        if self.record:
            s = self.series
            s["price"][k] = pool.price
            s["twap"][k] = self.twap
            s["target"][k] = self.ma
            s["error"][k] = np.log(self.ma) - np.log(self.twap)
            s["u"][k] = self.last_u
            s["J"][k] = J
            s["T"][k] = self.T
            s["burned"][k] = burned
            s["exits"][k] = events["exits"]
            s["R_acc"][k] = R_acc
        self._hook("post_buyback")
        self.k += 1

    def run(self, epochs: int | None = None):
        end = self.horizon if epochs is None else min(self.horizon, self.k + epochs)
        while self.k < end:
            self.step()
        return self

    # ------------------------------------------------------------------
    def metrics(self) -> dict:
        """Per-run summary metrics as arrays of shape (runs,)."""
        if not self.record or self.k < 1:
            raise InvalidArgument("metrics need a recorded run of at least 1 epoch")
        from .analysis import ma_deviation, volatility

        s = {name: v[: self.k] for name, v in self.series.items()}
        prices = np.concatenate([[np.full(self.runs, self.params.y0 / self.params.x0)], s["price"]]).T
        holdings = self.pop.holdings()
        positive = holdings.sum(axis=1) > 0
        g = np.full(self.runs, np.nan)
        if positive.any():
            g[positive] = gini(holdings[positive])
        T0 = self.params.T0
        models = self.pop.deployed_models
        return {
            "sigma_p": volatility(prices),
            "eps_ma": ma_deviation(s["price"].T, s["target"].T),
            "churn_pct": self.exits_total / max(self.pop.initial_operators, 1) * 100,
            "gini": g,
            "treasury_growth_pct": (self.T / T0 - 1) * 100 if T0 > 0 else np.zeros(self.runs),
            "control_effort": self.spent / self.k,
            "total_spent": self.spent.copy(),
            "revenue": self.revenue.copy(),
            "burned": self.pool.cumulative_burned.copy(),
            "innovation_rate": np.where(models > 0, self.new_models_total / np.maximum(models, 1), 0.0),
            "final_price": self.pool.price.copy(),
        }


def _subset_state(obj, idx, runs):
    """Restrict per-run arrays inside a policy (recursively) to ``idx``."""
    seen = set()

    def visit(o):
        if id(o) in seen or o is None:
            return
        seen.add(id(o))
        d = getattr(o, "__dict__", None)
        if d is None:
            return
        for name, v in list(d.items()):
            if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == runs:
                setattr(o, name, v[idx].copy())
            elif hasattr(v, "__dict__") and not isinstance(v, type):
                visit(v)
            elif hasattr(v, "maxlen"):  # deque of per-run arrays
                items = [a[idx].copy() if isinstance(a, np.ndarray) and a.ndim and a.shape[0] == runs else a
                         for a in v]
                v.clear()
                v.extend(items)

    visit(obj)


def simulate(params: WorldParams, policy: Policy, horizon: int, seed: int, runs=1, start: int = 0) -> World:
    """Build and run a world for run indices ``start .. start+runs-1``."""
    return World(params, policy, horizon, seed, range(start, start + runs)).run()
