"""Stability analysis of the linearized loop and run metrics.

Small-signal model (log price p, buyback J, alpha = 2/y):

    p_{k+1} = p_k + alpha * J_k

With J = u and the error e = target - p the closed loop has characteristic
polynomial

    z^2 (1 + a Kp + a Ki + a Kd) - z (2 + a Kp + 2 a Kd) + (1 + a Kd)

when the spend that moves the price is computed from the same epoch's error
(``timing="implicit"``: e_k = e_{k-1} - a u_k). If the spend acts one epoch
later (``timing="delayed"``: e_{k+1} = e_k - a u_k) the loop is third order:

    z (z - 1)^2 + a [Kp z (z - 1) + Ki z^2 + Kd (z - 1)^2]

``jury_test`` reports the quadratic's root verdict as ``stable`` and also
returns the three textbook inequalities and the exact Jury conditions for the
quadratic, so they can be compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import Gains
from .errors import AnalysisError, InsufficientData, InvalidArgument, UndefinedInput

_ROOT_TOL = 1e-12

IMPLICIT = "implicit"
DELAYED = "delayed"


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool                  # both roots of the quadratic strictly inside the unit circle
    roots: tuple
    magnitudes: tuple
    coefficients: tuple           # (a2, a1, a0)
    inequality_margins: tuple     # positivity, damping, integral (> 0 means satisfied)
    inequality_stable: bool
    jury_margins: tuple           # P(1), P(-1), a2 - |a0| (a2 normalized positive)
    jury_stable: bool
    causal_roots: tuple
    causal_stable: bool

    @property
    def max_magnitude(self) -> float:
        return max(self.magnitudes)


def char_poly(gains: Gains, alpha: float) -> tuple[float, float, float]:
    kp, ki, kd = gains.as_tuple()
    a = alpha
    return (1 + a * kp + a * ki + a * kd, -(2 + a * kp + 2 * a * kd), 1 + a * kd)


def causal_poly(gains: Gains, alpha: float) -> tuple[float, float, float, float]:
    kp, ki, kd = gains.as_tuple()
    a = alpha
    # z^3 - 2z^2 + z + a[(Kp + Ki + Kd) z^2 - (Kp + 2Kd) z + Kd]
    return (1.0, -2 + a * (kp + ki + kd), 1 - a * (kp + 2 * kd), a * kd)


def stated_inequalities(gains: Gains, alpha: float) -> tuple[float, float, float]:
    """Margins of Kp+Ki > 0, Kd < (2 - a Kp)/a and Ki < (4 - 2 a Kp)/a."""
    kp, ki, kd = gains.as_tuple()
    return (kp + ki, (2 - alpha * kp) / alpha - kd, (4 - 2 * alpha * kp) / alpha - ki)


def jury_test(gains: Gains, alpha: float) -> StabilityVerdict:
    if not alpha > 0:
        raise InvalidArgument("alpha must be > 0")
    a2, a1, a0 = char_poly(gains, alpha)
    if abs(a2) < 1e-14:
        raise AnalysisError("leading coefficient vanishes")
    roots = np.roots([a2, a1, a0])
    mags = np.abs(roots)
    stable = bool(np.all(mags < 1 - _ROOT_TOL))

    ineq = stated_inequalities(gains, alpha)
    s = 1.0 if a2 > 0 else -1.0
    p1 = s * (a2 + a1 + a0)
    pm1 = s * (a2 - a1 + a0)
    lead = s * a2 - abs(a0)
    jury = (p1, pm1, lead)

    c_roots = np.roots(causal_poly(gains, alpha))
    return StabilityVerdict(
        stable=stable,
        roots=tuple(complex(r) for r in roots),
        magnitudes=tuple(float(m) for m in mags),
        coefficients=(a2, a1, a0),
        inequality_margins=ineq,
        inequality_stable=all(m > 0 for m in ineq),
        jury_margins=jury,
        jury_stable=all(m > 0 for m in jury),
        causal_roots=tuple(complex(r) for r in c_roots),
        causal_stable=bool(np.all(np.abs(c_roots) < 1 - _ROOT_TOL)),
    )


_VERDICTS = {
    "roots": lambda v: v.stable,
    "inequalities": lambda v: v.inequality_stable,
    "causal": lambda v: v.causal_stable,
}


def find_alpha_boundary(gains: Gains, alpha_lo: float, alpha_hi: float, rtol: float = 1e-6,
                        verdict: str = "roots"):
    """Bisect for the plant gain where the verdict flips from stable to unstable.

    Returns (a_stable, a_unstable) bracketing the boundary to ``rtol``, or
    None if the verdict does not flip inside [alpha_lo, alpha_hi].
    """
    test = _VERDICTS[verdict]
    if not test(jury_test(gains, alpha_lo)) or test(jury_test(gains, alpha_hi)):
        return None
    lo, hi = alpha_lo, alpha_hi
    while (hi - lo) > rtol * lo:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if test(jury_test(gains, mid)):
            lo = mid
        else:
            hi = mid
    return lo, hi


def linear_loop_sim(gains: Gains, alpha: float, disturbance=0.0, n: int = 500, e0: float = 1.0,
                    timing: str = IMPLICIT, noise=None, derivative_on_error: bool = True):
    """Noise-free (unless ``noise`` is given) linear closed loop, PID on error.

    ``disturbance`` (scalar or length-n array) is added to the error each
    epoch; ``noise`` likewise. Returns (errors, outputs), each of length n+1
    with errors[0] = e0 and outputs[0] = 0.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    kp, ki, kd = gains.as_tuple()
    a = alpha
    d = np.broadcast_to(np.asarray(disturbance, dtype=float), (n,))
    w = np.zeros(n) if noise is None else np.broadcast_to(np.asarray(noise, dtype=float), (n,))
    e = np.empty(n + 1)
    u = np.zeros(n + 1)
    e[0] = e0
    I = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        if timing == IMPLICIT:
            # e_k = e_{k-1} - a u_k + d_k, u_k = Kp e_k + Ki (I + e_k) + Kd (e_k - e_{k-1})
            denom = 1 + a * (kp + ki + kd)
            for k in range(1, n + 1):
                e[k] = (e[k - 1] - a * (ki * I - kd * e[k - 1]) + d[k - 1] + w[k - 1]) / denom
                I += e[k]
                u[k] = kp * e[k] + ki * I + kd * (e[k] - e[k - 1])
        elif timing == DELAYED:
            prev = e0
            for k in range(1, n + 1):
                I += e[k - 1]
                uk = kp * e[k - 1] + ki * I + kd * (e[k - 1] - prev)
                prev = e[k - 1]
                u[k] = uk
                e[k] = e[k - 1] - a * uk + d[k - 1] + w[k - 1]
        else:
            raise InvalidArgument(f"unknown timing {timing!r}")
    return e, u


def diverges(errors, e0: float = None, factor: float = 10.0) -> bool:
    e = np.asarray(errors)
    e0 = abs(e[0]) if e0 is None else abs(e0)
    return bool(np.any(~np.isfinite(e)) or np.max(np.abs(e)) > factor * e0)


# Run metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class StepResponseMetrics:
    mse: float
    settling_time: int
    max_overshoot: float       # % of the initial step
    steady_state_error: float  # % of the initial step
    control_variance: float


def step_response_metrics(errors, controls, band: float = 0.02, tail: float = 0.1) -> StepResponseMetrics:
    e = np.asarray(errors, dtype=float)
    u = np.asarray(controls, dtype=float)
    if e.size == 0:
        raise InvalidArgument("empty error trajectory")
    e0 = abs(e[0])
    if e0 == 0:
        return StepResponseMetrics(float(np.mean(e**2)), 0, 0.0, 0.0, float(np.var(u)) if u.size else 0.0)
    outside = np.nonzero(np.abs(e) > band * e0)[0]
    settling = 0 if outside.size == 0 else int(outside[-1] + 1)
    past_zero = -np.sign(e[0]) * e
    overshoot = max(0.0, float(np.max(past_zero))) / e0 * 100
    m = max(1, int(math.ceil(tail * e.size)))
    ess = float(np.mean(np.abs(e[-m:]))) / e0 * 100
    return StepResponseMetrics(float(np.mean(e**2)), settling, overshoot, ess,
                               float(np.var(u)) if u.size else 0.0)


def volatility(prices) -> float:
    """Population standard deviation of log returns."""
    p = np.asarray(prices, dtype=float)
    if p.shape[-1] < 2:
        raise InsufficientData("need at least 2 prices")
    return np.std(np.diff(np.log(p), axis=-1), axis=-1)


def ma_deviation(prices, ma) -> float:
    p = np.asarray(prices, dtype=float)
    m = np.asarray(ma, dtype=float)
    if p.shape != m.shape:
        raise InvalidArgument("prices and ma must have equal length")
    if p.shape[-1] == 0:
        raise InsufficientData("empty series")
    return np.mean(np.abs(p - m) / m, axis=-1)


@dataclass(frozen=True)
class TreasuryGrowth:
    growth_pct: float
    mean_rate_pct: float   # average per-epoch % change
    rate_std_pct: float    # its standard deviation, the stability measure


def treasury_growth(series) -> TreasuryGrowth:
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise InsufficientData("empty treasury series")
    if s[0] <= 0:
        raise UndefinedInput("initial treasury must be > 0")
    growth = (s[-1] / s[0] - 1) * 100
    if s.size < 2:
        return TreasuryGrowth(growth, 0.0, 0.0)
    prev = np.where(s[:-1] > 0, s[:-1], np.nan)
    rates = np.diff(s) / prev * 100
    rates = rates[np.isfinite(rates)]
    if rates.size == 0:
        return TreasuryGrowth(growth, 0.0, 0.0)
    return TreasuryGrowth(growth, float(np.mean(rates)), float(np.std(rates)))


def op_count_proxy(gains: Gains, gamma: float = 0.1, twaps=None, filter_coeff: float = 0.3) -> float:
    """Fixed-point primitive operations per epoch for the given controller.

    Runs the scalar fixed-point controller over ``twaps`` (a short default
    path if omitted) and counts arithmetic calls.
    """
    from .controller import WadController
    from .wad import WAD, Wad, count_ops

    if twaps is None:
        twaps = [1.0, 0.97, 0.95, 0.99, 1.02, 1.01, 0.98, 1.0]
    ctl = WadController.from_floats(gains.kp, gains.ki, gains.kd, gamma, filter_coeff)
    target = Wad(WAD)
    T = Wad(1000 * WAD)
    with count_ops() as ops:
        for p in twaps:
            ctl.step(Wad.from_float(p), target, T)
    return sum(ops.values()) / len(twaps)


def windup_peak(gains: Gains, clamp_rule: str, saturated_epochs: int = 100, recovery_epochs: int = 60,
                decay: float = 0.8) -> float:
    """Peak |u| after a treasury refill following a long saturated stretch.

    Error is held at +1 for ``saturated_epochs`` while the treasury is empty,
    then the treasury is refilled and the error decays geometrically to zero.
    """
    from .controller import ActuatorConfig, DCBMController, ON_ERROR

    ctl = DCBMController(gains, ActuatorConfig(derivative_mode=ON_ERROR, clamp_rule=clamp_rule))
    for _ in range(saturated_epochs):
        ctl.output(math.exp(-1.0), 1.0, 0.0)
    peak = 0.0
    e = 1.0
    for _ in range(recovery_epochs):
        u = ctl.output(math.exp(-e), 1.0, 1000.0)
        peak = max(peak, abs(u))
        e *= decay
    return peak


# Ablation ---------------------------------------------------------------------

ABLATION_MASKS = {"P": (1, 0, 0), "PI": (1, 1, 0), "PD": (1, 0, 1), "PID": (1, 1, 1)}


@dataclass(frozen=True)
class AblationSpec:
    """Step-disturbance protocol on the one-epoch-delay linear loop.

    The error starts at ``e0``; every epoch a constant ``disturbance`` and
    Gaussian noise of ``noise_sigma`` are added. The default disturbance
    leaves the P-only loop an offset of 1.5% of e0.
    """
    gains: Gains = Gains(250.0, 150.0, 100.0)
    alpha: float = 0.002
    e0: float = 0.2
    epochs: int = 400
    disturbance: float = 0.0015
    noise_sigma: float = 2e-4
    runs: int = 200
    seed: int = 0


def ablation_study(spec: AblationSpec = AblationSpec()) -> dict:
    """Per-configuration arrays of step metrics, one entry per run.

    Run r uses the same noise path for every configuration.
    """
    if spec.runs < 1:
        raise InvalidArgument("runs must be >= 1")
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sigma, (spec.runs, spec.epochs))
    out = {}
    for name, (mp, mi, md) in ABLATION_MASKS.items():
        g = Gains(spec.gains.kp * mp, spec.gains.ki * mi, spec.gains.kd * md)
        rows = []
        for r in range(spec.runs):
            e, u = linear_loop_sim(g, spec.alpha, spec.disturbance, spec.epochs, spec.e0,
                                   timing=DELAYED, noise=noise[r])
            m = step_response_metrics(e, u)
            rows.append((m.mse, m.settling_time, m.max_overshoot, m.steady_state_error, m.control_variance))
        a = np.array(rows)
        out[name] = {k: a[:, i] for i, k in enumerate(
            ("mse", "settling_time", "max_overshoot", "steady_state_error", "control_variance"))}
    return out
