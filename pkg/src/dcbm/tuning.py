"""Grid search for DCBM gains, plain or against an attacker.

The loss of a gain triple on a scenario is

    w_vol * sigma_P / sigma_P(no buyback) - w_treasury * (T_final / T0 - 1)

averaged over seeded validation runs. Adversarial mode takes the worst loss
over a set of PGD attackers, each striking after a warm-up. Candidates must
pass the stability filter (quadratic roots and the one-epoch-delay loop) at
the scenario's median plant gain ``alpha = 2 * gamma * T / y``, which is the
small-signal gain from u to ln P when J = gamma * T * tanh(u).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .analysis import jury_test, volatility
from .attacks import pgd_sustained
from .controller import ActuatorConfig, Gains
from .errors import InvalidArgument, NoFeasibleGains
from .policies import DCBM, DEFAULT_GAMMA, NoBuyback
from .world import World, WorldParams

STANDARD = "standard"
ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class TuningSpec:
    kp: tuple = (5.0, 15.0, 30.0)
    ki: tuple = (0.0, 0.3, 1.0)
    kd: tuple = (0.0, 1.0)
    w_vol: float = 1.0
    w_treasury: float = 0.5
    adversaries: tuple = ((0.01, 2),)     # (eps, k) pairs for pgd_sustained
    warmup: int = 20
    runs: int = 8
    horizon: int = 200
    seed: int = 0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.runs < 1 or self.horizon < 2:
            raise InvalidArgument("runs must be >= 1 and horizon >= 2")
        if self.warmup < 0:
            raise InvalidArgument("warmup must be >= 0")

    def grid(self) -> list[Gains]:
        return [Gains(kp, ki, kd) for kp, ki, kd in itertools.product(self.kp, self.ki, self.kd)]


def _policy(spec, gains):
    return DCBM(gains, ActuatorConfig(gamma=spec.gamma))


def _prices(world):
    s = world.series["price"][: world.k]
    p0 = np.full(world.runs, world.params.y0 / world.params.x0)
    return np.concatenate([p0[None, :], s]).T


def _loss(spec, params, world, sigma_none):
    sigma = volatility(_prices(world))
    growth = world.T / params.T0 - 1.0 if params.T0 > 0 else np.zeros(world.runs)
    return float(np.mean(spec.w_vol * sigma / sigma_none - spec.w_treasury * growth))


def _sigma_none(spec, params):
    w = World(params, NoBuyback(), spec.horizon, spec.seed, range(spec.runs)).run()
    s = volatility(_prices(w))
    return np.where(s > 0, s, 1.0)


def scenario_alpha(spec: TuningSpec, params: WorldParams, gains: Gains) -> float:
    """Median over runs and epochs of 2*gamma*T/y under ``gains``."""
    w = World(params, _policy(spec, gains), spec.horizon, spec.seed, range(spec.runs), record=False)
    seen = []
    while w.k < w.horizon:
        seen.append(2.0 * spec.gamma * w.T / w.pool.y)
        w.step()
    a = float(np.median(np.concatenate(seen)))
    return a if a > 0 else 2.0 * spec.gamma * max(params.T0, 1e-12) / params.y0


def is_feasible(gains: Gains, alpha: float) -> bool:
    if gains.kp + gains.ki <= 0:
        return False
    v = jury_test(gains, alpha)
    return v.stable and v.causal_stable


def tuning_loss(spec: TuningSpec, params: WorldParams, gains: Gains, mode: str = STANDARD,
                sigma_none=None) -> float:
    """Loss of one gain triple; adversarial mode returns the worst case."""
    if sigma_none is None:
        sigma_none = _sigma_none(spec, params)
    if mode == STANDARD:
        w = World(params, _policy(spec, gains), spec.horizon, spec.seed, range(spec.runs)).run()
        return _loss(spec, params, w, sigma_none)
    if mode != ADVERSARIAL:
        raise InvalidArgument(f"unknown tuning mode {mode!r}")
    if not spec.adversaries:
        raise InvalidArgument("adversarial mode needs at least one adversary")
    worst = -np.inf
    for eps, k in spec.adversaries:
        w = World(params, _policy(spec, gains), spec.horizon, spec.seed, range(spec.runs))
        w.run(min(spec.warmup, spec.horizon - 1))
        pgd_sustained(w, eps, min(int(k), w.horizon - w.k))
        w.run()
        worst = max(worst, _loss(spec, params, w, sigma_none))
    return float(worst)


def tune_gains(spec: TuningSpec, scenario: WorldParams, mode: str = STANDARD, report: list | None = None) -> Gains:
    """Argmin of the tuning loss over the stable part of the grid.

    Ties go to the earlier grid point. When ``report`` is a list it receives
    one (gains, alpha, feasible, loss) tuple per grid point.
    """
    grid = spec.grid()
    if not grid:
        raise InvalidArgument("empty gain grid")
    if mode not in (STANDARD, ADVERSARIAL):
        raise InvalidArgument(f"unknown tuning mode {mode!r}")
    sigma_none = _sigma_none(spec, scenario)
    best, best_loss = None, np.inf
    for g in grid:
        alpha = scenario_alpha(spec, scenario, g)
        ok = is_feasible(g, alpha)
        loss = tuning_loss(spec, scenario, g, mode, sigma_none) if ok else np.nan
        if report is not None:
            report.append((g, alpha, ok, loss))
        if ok and loss < best_loss:
            best, best_loss = g, loss
    if best is None:
        raise NoFeasibleGains("no grid point passes the stability filter")
    return best
