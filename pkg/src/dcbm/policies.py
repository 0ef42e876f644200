"""Buyback policies behind one interface.

A policy sees an :class:`Observation` once per epoch and returns the
stablecoin amount J to spend. Every field may be a scalar or an array with one
entry per run. Policies that keep memory (the PID family) must be ``reset``
with the batch size before use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .controller import ActuatorConfig, CertConfig, DCBMController, Gains
from .errors import InvalidArgument


@dataclass
class Observation:
    k: int
    twap: object
    ma: object
    T: object
    R_acc: object = 0.0
    y: object = 1.0
    foresight: object = None  # (runs, H) upcoming log-price shocks, oracle policies only


def _zeros_like(v):
    return np.zeros_like(np.asarray(v, dtype=float)) if np.ndim(v) else 0.0


# plain functions -------------------------------------------------------------

def no_buyback(state: Observation):
    return _zeros_like(state.T)


def fixed_rate(state: Observation, rho: float = 0.5):
    """Spend a fixed share of this epoch's revenue."""
    if not 0.0 <= rho <= 1.0:
        raise InvalidArgument("rho must lie in [0, 1]")
    return rho * np.asarray(state.R_acc, dtype=float) if np.ndim(state.R_acc) else rho * state.R_acc


def threshold(state: Observation, spend_fraction: float = 0.05, hysteresis: float = 0.0):
    """Spend s*T whenever TWAP is strictly below MA*(1-h), else nothing."""
    if not 0.0 < spend_fraction <= 1.0:
        raise InvalidArgument("spend_fraction must lie in (0, 1]")
    if hysteresis < 0:
        raise InvalidArgument("hysteresis must be >= 0")
    trigger = np.asarray(state.twap) < np.asarray(state.ma) * (1.0 - hysteresis)
    J = np.where(trigger, spend_fraction * np.asarray(state.T, dtype=float), 0.0)
    return float(J) if np.ndim(J) == 0 else J


def mpc_plans(n_levels: int, horizon: int) -> np.ndarray:
    """All index plans in lexicographic order, shape (n_levels**horizon, horizon)."""
    return np.array(list(itertools.product(range(n_levels), repeat=horizon)), dtype=np.int64)


def mpc_oracle(state: Observation, horizon: int, noise, grid, effort_weight: float = 0.1):
    """Receding-horizon buyback by exhaustive search over ``grid**horizon``.

    The plant is the small-signal model p_{h+1} = p_h + alpha*J_h + xi_h with
    alpha = 2/y and perfect knowledge of the next ``horizon`` shocks xi. The
    cost is sum_h e_h^2 + w*(alpha*J_h)^2 with e_h = ln(MA) - p_h, h = 1..H.
    ``grid`` holds spend levels; a 1-d grid is shared by every run, a 2-d
    grid gives each run its own levels. Ties go to the lexicographically
    first plan, so an all-zero plan wins when nothing needs doing.
    """
    if not 1 <= horizon <= 4:
        raise InvalidArgument("horizon must lie in 1..4")
    g = np.asarray(grid, dtype=float)
    scalar = np.ndim(state.twap) == 0
    p0 = np.atleast_1d(np.log(np.asarray(state.twap, dtype=float)))
    runs = p0.shape[0]
    if g.ndim == 1:
        g = np.broadcast_to(g, (runs, g.size))
    if g.shape[1] > 7:
        raise InvalidArgument("grid may hold at most 7 levels")
    target = np.broadcast_to(np.log(np.asarray(state.ma, dtype=float)), (runs,))
    alpha = np.broadcast_to(2.0 / np.asarray(state.y, dtype=float), (runs,))
    T = np.broadcast_to(np.asarray(state.T, dtype=float), (runs,))
    xi = np.asarray(noise, dtype=float).reshape(runs, -1)[:, :horizon]
    if xi.shape[1] < horizon:
        raise InvalidArgument("noise must cover the horizon")

    plans = mpc_plans(g.shape[1], horizon)                  # (P, H)
    J = g[:, plans]                                         # (R, P, H)
    feasible = J.sum(axis=2) <= T[:, None] * (1 + 1e-12)
    aJ = alpha[:, None, None] * J
    p = p0[:, None, None] + np.cumsum(aJ + xi[:, None, :], axis=2)
    e = target[:, None, None] - p
    cost = np.sum(e**2 + effort_weight * aJ**2, axis=2)
    cost = np.where(feasible, cost, np.inf)
    best = np.argmin(cost, axis=1)
    out = J[np.arange(runs), best, 0]
    out = np.where(T > 0, out, 0.0)
    return float(out[0]) if scalar else out


# policy objects --------------------------------------------------------------

DEFAULT_GAINS = Gains(15.0, 0.3, 1.0)
DEFAULT_GAMMA = 0.2


class Policy:
    name = "policy"
    needs_foresight = 0

    def reset(self, runs: int):
        pass

    def decide(self, obs: Observation):
        raise NotImplementedError


class NoBuyback(Policy):
    name = "no_buyback"

    def decide(self, obs):
        return no_buyback(obs)


@dataclass
class FixedRate(Policy):
    rho: float = 0.5
    name: str = "fixed_rate"

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidArgument("rho must lie in [0, 1]")

    def decide(self, obs):
        return fixed_rate(obs, self.rho)


@dataclass
class Threshold(Policy):
    spend_fraction: float = 0.05
    hysteresis: float = 0.0
    name: str = "threshold"

    def decide(self, obs):
        return threshold(obs, self.spend_fraction, self.hysteresis)


@dataclass
class MPCOracle(Policy):
    horizon: int = 3
    levels: tuple = (0.0, 0.02, 0.05, 0.1, 0.2)  # fractions of the treasury
    effort_weight: float = 0.1
    name: str = "mpc_oracle"

    @property
    def needs_foresight(self):
        return self.horizon

    def decide(self, obs):
        T = np.atleast_1d(np.asarray(obs.T, dtype=float))
        grid = T[:, None] * np.asarray(self.levels)[None, :]
        J = mpc_oracle(obs, self.horizon, obs.foresight, grid, self.effort_weight)
        return J


@dataclass
class DCBM(Policy):
    gains: Gains = field(default_factory=lambda: DEFAULT_GAINS)
    actuator: ActuatorConfig = field(default_factory=lambda: ActuatorConfig(gamma=DEFAULT_GAMMA))
    cert: CertConfig = field(default_factory=CertConfig)
    name: str = "dcbm"

    def __post_init__(self):
        self.controller = DCBMController(self.gains, self.actuator, self.cert)
        self.last_u = None

    def reset(self, runs: int):
        self.controller.reset()
        self.last_u = None

    def decide(self, obs):
        J, u = self.controller.decide(np.asarray(obs.twap, dtype=float), obs.ma, np.asarray(obs.T, dtype=float))
        self.last_u = u
        return J


def dcbm_cert(gains: Gains = DEFAULT_GAINS, actuator: ActuatorConfig = None, integral_clamp: float = 0.5,
              output_rate_limit: float = 0.1) -> DCBM:
    """PID with clipped integral and a rate-limited output."""
    actuator = actuator if actuator is not None else ActuatorConfig(gamma=DEFAULT_GAMMA)
    return DCBM(gains, actuator, CertConfig(integral_clamp, output_rate_limit, True), name="dcbm_cert")


POLICIES = {
    "no_buyback": NoBuyback,
    "fixed_rate": FixedRate,
    "threshold": Threshold,
    "mpc_oracle": MPCOracle,
    "dcbm": DCBM,
    "dcbm_cert": dcbm_cert,
}
