"""Treasury accounting.

Two laws are supported. ``conservation`` is T' = T + R - J and refuses to
overspend. ``ops_clamped`` also pays a fixed operating cost and floors the
balance at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, SolvencyViolation
from .wad import ZERO, Wad, wad_mul

CONSERVATION = "conservation"
OPS_CLAMPED = "ops_clamped"


@dataclass
class Treasury:
    balance: float
    ops_cost: float = 0.0
    accounting_mode: str = CONSERVATION
    dust_floor: float = 1e-6

    def __post_init__(self):
        if self.accounting_mode not in (CONSERVATION, OPS_CLAMPED):
            raise InvalidArgument(f"unknown accounting mode {self.accounting_mode!r}")
        if self.balance < 0 or self.ops_cost < 0:
            raise InvalidArgument("balance and ops_cost must be >= 0")

    @property
    def depleted(self) -> bool:
        return self.balance < self.dust_floor


def apply_epoch(t: Treasury, R_acc, J) -> Treasury:
    """Return the treasury after one epoch of revenue R_acc and buyback spend J."""
    zero = ZERO if isinstance(t.balance, Wad) else 0
    if R_acc < zero or J < zero:
        raise InvalidArgument("R_acc and J must be >= 0")
    gross = t.balance + R_acc
    if t.accounting_mode == CONSERVATION:
        if J > gross:
            raise SolvencyViolation(f"spend {J} exceeds available {gross}")
        new = gross - J
    else:
        new = gross - J - t.ops_cost
        if new < zero:
            new = zero
    return Treasury(new, t.ops_cost, t.accounting_mode, t.dust_floor)


def doomsday_trajectory(T0, lambdas):
    """Balance path with no revenue when a fraction lambda_k is spent each epoch.

    Returns [T0, T0(1-l0), T0(1-l0)(1-l1), ...]. Accepts floats or Wad values;
    the Wad path mirrors the controller's own truncation (spend = T*l truncated).
    """
    if T0 <= (ZERO if isinstance(T0, Wad) else 0):
        raise InvalidArgument("T0 must be > 0")
    out = [T0]
    T = T0
    for lam in lambdas:
        if isinstance(lam, Wad):
            if not (0 <= int(lam) < 10**18):
                raise InvalidArgument(f"lambda must lie in [0,1), got {lam}")
            T = T - wad_mul(T, lam)
        else:
            if not 0.0 <= lam < 1.0:
                raise InvalidArgument(f"lambda must lie in [0,1), got {lam}")
            T = T * (1.0 - lam)
        out.append(T)
    return out


def doomsday_closed_form(T0: float, lambdas) -> np.ndarray:
    """Same trajectory as a cumulative product (float only)."""
    lam = np.asarray(lambdas, dtype=float)
    if np.any((lam < 0) | (lam >= 1)):
        raise InvalidArgument("lambdas must lie in [0,1)")
    return T0 * np.concatenate([[1.0], np.cumprod(1.0 - lam)])
