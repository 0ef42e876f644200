"""Constant-product pool, block price oracle and the small-signal plant model.

Price is quoted as stablecoin per token, P = y / x. K is fixed between
liquidity events and the token reserve is always re-derived as K / y, so
rounding never accumulates across trades.

Fees on trades are skimmed from the input and paid to a fee sink rather than
left in the pool; this keeps K exactly constant. Buybacks pay ``buyback_fee``
(0 by default), which keeps the buyback price update exact.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidArgument
from .wad import ONE, WAD, ZERO, Wad, wad_div, wad_mul

BUY_TOKEN = "buy-token"    # stablecoin in, tokens out
SELL_TOKEN = "sell-token"  # tokens in, stablecoin out


@dataclass
class Pool:
    x: float  # token reserve
    y: float  # stablecoin reserve
    fee_rate: float = 0.003
    buyback_fee: float = 0.0
    cumulative_burned: float = 0.0
    fees_stable: float = 0.0
    fees_token: float = 0.0
    K: float = field(init=False)

    def __post_init__(self):
        if not (self.x > 0 and self.y > 0):
            raise InvalidArgument("pool reserves must be positive")
        if not 0.0 <= self.fee_rate <= 0.01:
            raise InvalidArgument("fee_rate must lie in [0, 0.01]")
        if not 0.0 <= self.buyback_fee <= 0.01:
            raise InvalidArgument("buyback_fee must lie in [0, 0.01]")
        self.K = self.x * self.y

    @property
    def price(self) -> float:
        return self.y / self.x

    @property
    def alpha(self) -> float:
        return 2.0 / self.y

    def copy(self) -> Pool:
        return copy.copy(self)

    def buyback(self, J: float) -> float:
        """Spend J stablecoin on tokens and burn them. Returns tokens burned."""
        if not J >= 0:
            raise InvalidArgument(f"buyback amount must be >= 0, got {J}")
        if J == 0:
            return 0.0
        fee = J * self.buyback_fee
        self.fees_stable += fee
        y_new = self.y + (J - fee)
        x_new = self.K / y_new
        burned = self.x - x_new
        self.x, self.y = x_new, y_new
        self.cumulative_burned += burned
        return burned

    def trade(self, direction: str, amount_in: float) -> float:
        if not amount_in > 0:
            raise InvalidArgument(f"amount_in must be > 0, got {amount_in}")
        net = amount_in * (1.0 - self.fee_rate)
        if direction == BUY_TOKEN:
            self.fees_stable += amount_in - net
            y_new = self.y + net
            x_new = self.K / y_new
            out = self.x - x_new
        elif direction == SELL_TOKEN:
            self.fees_token += amount_in - net
            x_new = self.x + net
            y_new = self.K / x_new
            out = self.y - y_new
        else:
            raise InvalidArgument(f"unknown direction {direction!r}")
        self.x, self.y = x_new, y_new
        return out

    def quote(self, direction: str, amount_in: float) -> float:
        return self.copy().trade(direction, amount_in)

    def remove_liquidity(self, fraction: float) -> tuple[float, float]:
        """Withdraw a fraction of both reserves (price unchanged); K is re-derived."""
        if not 0.0 <= fraction < 1.0:
            raise InvalidArgument("fraction must lie in [0, 1)")
        dx, dy = self.x * fraction, self.y * fraction
        self.x -= dx
        self.y -= dy
        self.K = self.x * self.y
        return dx, dy

    def add_liquidity(self, dy: float) -> float:
        """Deposit dy stablecoin plus the matching tokens at spot. Returns tokens deposited."""
        if not dy > 0:
            raise InvalidArgument("dy must be > 0")
        dx = dy / self.price
        self.x += dx
        self.y += dy
        self.K = self.x * self.y
        return dx


def execute_buyback(pool: Pool, J: float) -> tuple[float, Pool]:
    p = pool.copy()
    burned = p.buyback(J)
    return burned, p


def execute_trade(pool: Pool, direction: str, amount_in: float) -> tuple[float, Pool]:
    p = pool.copy()
    out = p.trade(direction, amount_in)
    return out, p


def alpha(pool) -> float:
    """Price impact coefficient 2/y: d ln P / dJ at J = 0."""
    y = pool.y
    if isinstance(y, Wad):
        return wad_div(Wad(2 * WAD), y)
    if not y > 0:
        raise InvalidArgument("stable reserve must be positive")
    return 2.0 / y


def linearized_log_price(p: float, alpha_k: float, J: float, xi: float = 0.0) -> float:
    """Small-signal plant: p' = p + alpha*J + xi."""
    return p + alpha_k * J + xi


def buyback_price(P, y, J):
    """Exact post-buyback price P(1 + J/y)^2 for a fee-free buyback."""
    return P * (1.0 + J / y) ** 2


# Array forms used by the batched simulator (one pool per run). ---------------

def swap_stable_in(x, y, K, amount, fee_rate):
    """Stable in, tokens out, over arrays. Returns (tokens_out, x', y', fee)."""
    net = amount * (1.0 - fee_rate)
    y_new = y + net
    x_new = K / y_new
    return x - x_new, x_new, y_new, amount - net


def swap_token_in(x, y, K, amount, fee_rate):
    """Tokens in, stable out, over arrays. Returns (stable_out, x', y', fee)."""
    net = amount * (1.0 - fee_rate)
    x_new = x + net
    y_new = K / x_new
    return y - y_new, x_new, y_new, amount - net


def stable_for_tokens_out(x, y, K, tokens_out, fee_rate):
    """Gross stablecoin needed to receive exactly ``tokens_out`` tokens."""
    x_new = x - tokens_out
    return (K / x_new - y) / (1.0 - fee_rate)


@dataclass
class WadPool:
    """Fixed-point mirror of :class:`Pool` (no fees on buybacks)."""

    x: Wad
    y: Wad
    fee_rate: Wad = field(default_factory=lambda: Wad(3 * 10**15))
    cumulative_burned: Wad = ZERO
    fees_stable: Wad = ZERO
    fees_token: Wad = ZERO
    K_raw: int = field(init=False)  # exact x*y at 10**36 scale

    def __post_init__(self):
        if int(self.x) <= 0 or int(self.y) <= 0:
            raise InvalidArgument("pool reserves must be positive")
        self.K_raw = int(self.x) * int(self.y)

    @property
    def price(self) -> Wad:
        return wad_div(self.y, self.x)

    def copy(self) -> WadPool:
        return copy.copy(self)

    def _x_for(self, y: Wad) -> Wad:
        return Wad(self.K_raw // int(y))

    def buyback(self, J: Wad) -> Wad:
        if int(J) < 0:
            raise InvalidArgument(f"buyback amount must be >= 0, got {J}")
        if int(J) == 0:
            return ZERO
        y_new = self.y + J
        x_new = self._x_for(y_new)
        burned = self.x - x_new
        self.x, self.y = x_new, y_new
        self.cumulative_burned = self.cumulative_burned + burned
        return burned

    def trade(self, direction: str, amount_in: Wad) -> Wad:
        if int(amount_in) <= 0:
            raise InvalidArgument(f"amount_in must be > 0, got {amount_in}")
        net = wad_mul(amount_in, ONE - self.fee_rate)
        if direction == BUY_TOKEN:
            self.fees_stable = self.fees_stable + (amount_in - net)
            y_new = self.y + net
            x_new = self._x_for(y_new)
            out = self.x - x_new
        elif direction == SELL_TOKEN:
            self.fees_token = self.fees_token + (amount_in - net)
            x_new = self.x + net
            y_new = Wad(self.K_raw // int(x_new))
            out = self.y - y_new
        else:
            raise InvalidArgument(f"unknown direction {direction!r}")
        self.x, self.y = x_new, y_new
        return out


class PriceOracle:
    """Ring buffer of per-block spot prices with an arithmetic TWAP."""

    def __init__(self, epoch_length: int = 50, block_time: float = 12.0, capacity: int | None = None):
        if epoch_length < 1:
            raise InvalidArgument("epoch_length must be >= 1")
        self.N = int(epoch_length)
        self.block_time = float(block_time)
        self._buf = deque(maxlen=capacity or self.N)

    def __len__(self):
        return len(self._buf)

    def record_block(self, P) -> None:
        p = float(P)
        if not (math.isfinite(p) and p > 0):
            raise InvalidArgument(f"block price must be positive and finite, got {P}")
        self._buf.append(P)

    def prices(self) -> list:
        return list(self._buf)

    def twap(self):
        if len(self._buf) < self.N:
            raise InsufficientData(f"need {self.N} block prices, have {len(self._buf)}")
        window = list(self._buf)[-self.N:]
        if isinstance(window[0], Wad):
            return Wad(sum(int(p) for p in window) // self.N)
        return float(np.mean(window))


def record_block(oracle: PriceOracle, P) -> None:
    oracle.record_block(P)


def twap(oracle: PriceOracle):
    return oracle.twap()


class BatchPool:
    """One constant-product pool per run, held as arrays.

    Trading fees go to ``fees_stable`` / ``fees_token``; reserves and K follow
    the same rules as :class:`Pool`. Zero-size orders leave a pool untouched.
    """

    def __init__(self, runs: int, x0: float, y0: float, fee_rate: float = 0.003, buyback_fee: float = 0.0):
        if not (x0 > 0 and y0 > 0):
            raise InvalidArgument("pool reserves must be positive")
        if not 0.0 <= fee_rate <= 0.01:
            raise InvalidArgument("fee_rate must lie in [0, 0.01]")
        self.x = np.full(runs, float(x0))
        self.y = np.full(runs, float(y0))
        self.K = self.x * self.y
        self.fee_rate = float(fee_rate)
        self.buyback_fee = float(buyback_fee)
        self.fees_stable = np.zeros(runs)
        self.fees_token = np.zeros(runs)
        self.cumulative_burned = np.zeros(runs)

    @property
    def price(self):
        return self.y / self.x

    @property
    def alpha(self):
        return 2.0 / self.y

    def buy_tokens(self, stable_in):
        """Swap stablecoin in for tokens; returns tokens out per run."""
        amt = np.asarray(stable_in, dtype=float)
        on = amt > 0
        out, x_new, y_new, fee = swap_stable_in(self.x, self.y, self.K, amt, self.fee_rate)
        out = np.where(on, out, 0.0)
        self.x = np.where(on, x_new, self.x)
        self.y = np.where(on, y_new, self.y)
        self.fees_stable += np.where(on, fee, 0.0)
        return out

    def sell_tokens(self, tokens_in):
        amt = np.asarray(tokens_in, dtype=float)
        on = amt > 0
        out, x_new, y_new, fee = swap_token_in(self.x, self.y, self.K, amt, self.fee_rate)
        out = np.where(on, out, 0.0)
        self.x = np.where(on, x_new, self.x)
        self.y = np.where(on, y_new, self.y)
        self.fees_token += np.where(on, fee, 0.0)
        return out

    def stable_for_tokens(self, tokens_out):
        t = np.asarray(tokens_out, dtype=float)
        if np.any(t >= self.x):
            raise InvalidArgument("cannot buy the whole token reserve")
        return np.where(t > 0, stable_for_tokens_out(self.x, self.y, self.K, t, self.fee_rate), 0.0)

    def buyback(self, J):
        """Spend J on tokens and burn them. Returns tokens burned per run."""
        J = np.asarray(J, dtype=float)
        if np.any(J < 0):
            raise InvalidArgument("buyback amount must be >= 0")
        on = J > 0
        fee = J * self.buyback_fee
        y_new = self.y + (J - fee)
        x_new = self.K / y_new
        burned = np.where(on, self.x - x_new, 0.0)
        self.x = np.where(on, x_new, self.x)
        self.y = np.where(on, y_new, self.y)
        self.fees_stable += np.where(on, fee, 0.0)
        self.cumulative_burned += burned
        return burned

    def shift_log_price(self, delta):
        """Fee-free outside trade that moves ln P by ``delta`` along the curve.

        Returns tokens leaving the pool (negative when tokens flow in).
        """
        d = np.asarray(delta, dtype=float)
        y_new = self.y * np.exp(d / 2.0)
        x_new = self.K / y_new
        moved = np.where(d != 0, self.x - x_new, 0.0)
        self.x = np.where(d != 0, x_new, self.x)
        self.y = np.where(d != 0, y_new, self.y)
        return moved

    def remove_liquidity(self, fraction, mask=None):
        """Withdraw a fraction of both reserves; returns (tokens, stable) withdrawn."""
        f = np.asarray(fraction, dtype=float) if mask is None else np.where(mask, fraction, 0.0)
        if np.any((f < 0) | (f >= 1)):
            raise InvalidArgument("fraction must lie in [0, 1)")
        dx, dy = self.x * f, self.y * f
        self.x = self.x - dx
        self.y = self.y - dy
        self.K = self.x * self.y
        return dx, dy

    def subset(self, idx):
        """Copy of the pools for the runs selected by ``idx``."""
        out = copy.copy(self)
        for name in ("x", "y", "K", "fees_stable", "fees_token", "cumulative_burned"):
            setattr(out, name, getattr(self, name)[idx].copy())
        return out
