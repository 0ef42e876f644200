"""PID buyback controller.

The error is measured in log space, e = ln(target) - ln(TWAP), so a positive
error means the token trades below its moving-average target. The controller
output u is turned into a stablecoin spend by ``actuate``:

    J = T * gamma * tanh(max(0, u))

which never reaches gamma * T because tanh is capped at tanh(8) < 1.

Two implementations share these semantics. The float one works elementwise
on numpy arrays, one entry per Monte Carlo run. ``WadController`` is a scalar
fixed-point version used for the solvency checks and for operation counting.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, InvalidArgument
from .wad import ONE, WAD, ZERO, Wad, wad_ln, wad_max, wad_min, wad_mul, wad_tanh

TANH_CAP = 8.0  # matches the fixed-point saturation point
SATURATION_KNEE = 0.99

ON_MEASUREMENT = "measurement"
ON_ERROR = "error"

# integration rules
CLAMP_SATURATION = "saturation"  # freeze when T <= 0 or the last output hit the knee
CLAMP_EMPTY = "empty"            # freeze only when T <= 0
CLAMP_NONE = "none"              # unconditional integration (windup reference)


@dataclass(frozen=True)
class Gains:
    kp: float
    ki: float
    kd: float
    dt: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.kp, self.ki, self.kd, self.dt)):
            raise InvalidArgument("gains must be finite")
        if self.dt <= 0:
            raise InvalidArgument("dt must be > 0")

    def as_tuple(self):
        return (self.kp, self.ki, self.kd)


@dataclass(frozen=True)
class ActuatorConfig:
    gamma: float = 0.1
    derivative_mode: str = ON_MEASUREMENT
    filter_coeff: float = 0.3
    input_smooth_window: int = 1
    clamp_rule: str = CLAMP_SATURATION

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidArgument("gamma must lie in (0, 1]")
        if self.derivative_mode not in (ON_MEASUREMENT, ON_ERROR):
            raise InvalidArgument(f"unknown derivative_mode {self.derivative_mode!r}")
        if not 0.0 <= self.filter_coeff <= 1.0:
            raise InvalidArgument("filter_coeff must lie in [0, 1]")
        if self.input_smooth_window < 1:
            raise InvalidArgument("input_smooth_window must be >= 1")
        if self.clamp_rule not in (CLAMP_SATURATION, CLAMP_EMPTY, CLAMP_NONE):
            raise InvalidArgument(f"unknown clamp_rule {self.clamp_rule!r}")


@dataclass(frozen=True)
class CertConfig:
    integral_clamp: float = 1.0
    output_rate_limit: float = 0.25
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not (self.integral_clamp > 0 and self.output_rate_limit > 0):
            raise InvalidArgument("integral_clamp and output_rate_limit must be > 0")


@dataclass
class ControllerState:
    """Per-run memory. Fields are floats or equally shaped arrays."""

    integral: object = 0.0
    prev_error: object = None
    prev_measurement: object = None  # filtered log TWAP
    prev_output: object = 0.0
    started: bool = False


@dataclass
class TargetTracker:
    ema: object
    beta: float = 2.0 / 31.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise InvalidArgument("beta must lie in (0, 1]")
        if np.any(np.asarray(self.ema) <= 0):
            raise DomainError("target price must be > 0")


def compute_error(target, measured):
    """ln(target) - ln(measured); positive when the price sits below target."""
    if np.any(np.asarray(target) <= 0) or np.any(np.asarray(measured) <= 0):
        raise DomainError("prices must be > 0")
    return np.log(target) - np.log(measured)


def ema_update(tracker: TargetTracker, P_twap) -> TargetTracker:
    if np.any(np.asarray(P_twap) <= 0):
        raise DomainError("TWAP must be > 0")
    b = tracker.beta
    return TargetTracker(b * P_twap + (1.0 - b) * tracker.ema, b)


def pid_step(state: ControllerState, gains: Gains, e_k, treasury_positive=True, saturated_prev=False,
             *, log_measurement=None, derivative_mode=ON_ERROR, filter_coeff=0.0,
             cert: CertConfig | None = None):
    """One PID update. Returns (u_k, new_state); ``state`` is not modified.

    In measurement mode the derivative uses a low-pass filtered log price
    m_k = (1-b)*ln P + b*m_{k-1} and is -(m_k - m_{k-1})/dt.
    """
    e_k = np.asarray(e_k, dtype=float) if not np.isscalar(e_k) else float(e_k)
    dt = gains.dt

    integrate = np.logical_and(treasury_positive, np.logical_not(saturated_prev))
    integral = state.integral + np.where(integrate, e_k, 0.0) * dt
    if cert is not None and cert.enabled:
        integral = np.clip(integral, -cert.integral_clamp, cert.integral_clamp)

    m_k = state.prev_measurement
    if derivative_mode == ON_MEASUREMENT:
        if log_measurement is None:
            raise InvalidArgument("measurement mode needs log_measurement")
        if not state.started:
            m_k = log_measurement
            d_k = 0.0 * e_k
        else:
            m_k = (1.0 - filter_coeff) * log_measurement + filter_coeff * state.prev_measurement
            d_k = -(m_k - state.prev_measurement) / dt
    else:
        d_k = 0.0 * e_k if not state.started else (e_k - state.prev_error) / dt

    u = gains.kp * e_k + gains.ki * integral + gains.kd * d_k
    if cert is not None and cert.enabled and state.started:
        step = cert.output_rate_limit * dt
        u = np.clip(u, state.prev_output - step, state.prev_output + step)
    if np.ndim(u) == 0:
        u, integral = float(u), float(integral)
    return u, ControllerState(integral, e_k, m_k, u, True)


def cert_constrain(u_raw, state: ControllerState, cert: CertConfig, dt: float = 1.0,
                   gains: Gains | None = None, e_k=None, d_k=0.0):
    """Apply the certification limits to a raw output.

    With ``gains`` and ``e_k`` the output is first rebuilt with the integral
    clamped to +-I_max; the result is then rate limited around u_{k-1}.
    """
    if not cert.enabled:
        return u_raw
    u = u_raw
    if gains is not None and e_k is not None:
        I = np.clip(state.integral, -cert.integral_clamp, cert.integral_clamp)
        u = gains.kp * e_k + gains.ki * I + gains.kd * d_k
    step = cert.output_rate_limit * dt
    out = np.clip(u, state.prev_output - step, state.prev_output + step)
    return float(out) if np.ndim(out) == 0 else out


def saturation_level(u):
    """tanh(max(0, u)) with the actuator cap applied."""
    return np.tanh(np.clip(u, 0.0, TANH_CAP))


def actuate(u_k, T_k, gamma):
    """Buyback spend J = T*gamma*tanh(max(0,u)); 0 <= J < gamma*T."""
    if np.any(np.asarray(T_k) < 0):
        raise InvalidArgument("treasury must be >= 0")
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgument("gamma must lie in (0, 1]")
    return T_k * gamma * saturation_level(u_k)


class DCBMController:
    """Stateful controller over a batch of runs (arrays of shape ``(n,)``)."""

    def __init__(self, gains: Gains, actuator: ActuatorConfig = ActuatorConfig(),
                 cert: CertConfig | None = None):
        self.gains = gains
        self.actuator = actuator
        self.cert = cert if cert is not None else CertConfig()
        self.state = ControllerState()
        self._history = deque(maxlen=actuator.input_smooth_window)

    def reset(self):
        self.state = ControllerState()
        self._history.clear()

    def flags(self, T):
        """(treasury_positive, saturated_prev) for the configured clamp rule."""
        rule = self.actuator.clamp_rule
        if rule == CLAMP_NONE:
            return True, False
        pos = np.asarray(T) > 0
        if rule == CLAMP_EMPTY or not self.state.started:
            return pos, False
        return pos, saturation_level(self.state.prev_output) > SATURATION_KNEE

    def output(self, twap, target, T):
        """Advance one epoch and return u_k."""
        self._history.append(np.asarray(twap, dtype=float))
        measured = np.mean(self._history, axis=0) if len(self._history) > 1 else self._history[0]
        e = compute_error(target, measured)
        pos, sat = self.flags(T)
        u, self.state = pid_step(
            self.state, self.gains, e, pos, sat,
            log_measurement=np.log(measured),
            derivative_mode=self.actuator.derivative_mode,
            filter_coeff=self.actuator.filter_coeff,
            cert=self.cert,
        )
        self.last_error = e
        return u

    def decide(self, twap, target, T):
        u = self.output(twap, target, T)
        return actuate(u, T, self.actuator.gamma), u


@dataclass
class EpochRecord:
    k: int
    P_twap: float
    P_target: float
    e: float
    u_raw: float
    u_applied: float
    J: float
    T: float
    burned: float


def epoch_step(controller: DCBMController, tracker: TargetTracker, pool, treasury, twap, R_acc, k=0):
    """One closed-loop epoch on scalar state.

    Order: EMA update, error, PID, optional certification, actuation,
    buyback, treasury update. Returns (J, record, tracker', treasury').
    """
    from .amm import execute_buyback
    from .treasury import apply_epoch

    tracker = ema_update(tracker, twap)
    J, u = controller.decide(twap, tracker.ema, treasury.balance)
    J = float(J)
    burned, new_pool = execute_buyback(pool, J)
    pool.x, pool.y, pool.cumulative_burned = new_pool.x, new_pool.y, new_pool.cumulative_burned
    treasury = apply_epoch(treasury, R_acc, J)
    rec = EpochRecord(k, float(twap), float(tracker.ema), float(controller.last_error),
                      float(u), float(u), J, treasury.balance, burned)
    return J, rec, tracker, treasury


# Fixed-point controller ------------------------------------------------------

def _w(v) -> Wad:
    return v if isinstance(v, Wad) else Wad.from_float(v)


@dataclass
class WadController:
    """Scalar fixed-point controller (error on measurement, filtered derivative).

    Terms whose gain is zero are skipped entirely, so a P-only controller
    executes strictly fewer operations than a full PID.
    """

    kp: Wad
    ki: Wad
    kd: Wad
    gamma: Wad
    filter_coeff: Wad = field(default_factory=lambda: Wad(3 * 10**17))
    integral_clamp: Wad | None = None
    clamp_rule: str = CLAMP_SATURATION
    integral: Wad = ZERO
    prev_m: Wad | None = None
    prev_u: Wad = ZERO

    @classmethod
    def from_floats(cls, kp, ki, kd, gamma, filter_coeff=0.3, **kw):
        return cls(_w(kp), _w(ki), _w(kd), _w(gamma), _w(filter_coeff), **kw)

    def step(self, twap: Wad, target: Wad, T: Wad) -> tuple[Wad, Wad, Wad]:
        """Returns (u, lambda, J) with lambda = gamma*tanh(max(0,u)) and J = T*lambda."""
        ln_p = wad_ln(twap)
        e = wad_ln(target) - ln_p
        u = ZERO
        if int(self.kp):
            u = u + wad_mul(self.kp, e)
        if int(self.ki):
            freeze = int(T) <= 0
            if self.clamp_rule == CLAMP_SATURATION and self.prev_m is not None:
                freeze = freeze or int(wad_tanh(wad_max(self.prev_u, ZERO))) > SATURATION_KNEE * WAD
            if self.clamp_rule == CLAMP_NONE:
                freeze = False
            if not freeze:
                self.integral = self.integral + e
            if self.integral_clamp is not None:
                self.integral = wad_max(-self.integral_clamp, wad_min(self.integral, self.integral_clamp))
            u = u + wad_mul(self.ki, self.integral)
        if int(self.kd):
            if self.prev_m is None:
                m = ln_p
            else:
                m = wad_mul(ONE - self.filter_coeff, ln_p) + wad_mul(self.filter_coeff, self.prev_m)
                u = u - wad_mul(self.kd, m - self.prev_m)
            self.prev_m = m
        elif self.prev_m is None:
            self.prev_m = ln_p
        self.prev_u = u
        lam = wad_mul(self.gamma, wad_tanh(wad_max(u, ZERO)))
        return u, lam, wad_mul(T, lam)
