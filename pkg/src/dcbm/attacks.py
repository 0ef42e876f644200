"""Attacks on a buyback policy, run against cloned worlds.

Every attack works on a :class:`~dcbm.world.World` positioned at the start
of an epoch and treats each Monte Carlo run as an independent trial. The
attacker's books are kept per run in stablecoin: cash from trades, a signed
token position (negative means borrowed tokens), and a holding charge of
``c_r * tau * exposure`` for every exposure held ``tau`` epochs. A one-block
exposure is held ``1/N`` epochs.

Profit channels are the constant-product closed forms: an attacker who buys
just before a buyback and sells just after keeps part of the price impact.
Manipulation (a one-block spike, or a position held through epochs) changes
the TWAP the policy sees and therefore the size of the buyback.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .amm import Pool, stable_for_tokens_out
from .errors import InvalidArgument

SELL = -1
BUY = 1


@dataclass(frozen=True)
class AttackBudget:
    eps: float                      # capital as a fraction of the pool's stable reserve
    max_steps: int = 1
    holding_cost: float = 0.0005    # c_r, per epoch per unit of exposure

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise InvalidArgument("eps must lie in [0, 1]")
        if self.max_steps < 1:
            raise InvalidArgument("max_steps must be >= 1")
        if self.holding_cost < 0:
            raise InvalidArgument("holding_cost must be >= 0")


@dataclass
class AttackOutcome:
    attacker_profit: np.ndarray
    success: np.ndarray
    treasury_drain: np.ndarray
    deviation: np.ndarray
    detail: dict = field(default_factory=dict)

    @classmethod
    def from_profit(cls, profit, drain=0.0, deviation=0.0, **detail):
        p = np.atleast_1d(np.asarray(profit, dtype=float))
        return cls(p, p > 0, np.broadcast_to(np.asarray(drain, dtype=float), p.shape).copy(),
                   np.broadcast_to(np.asarray(deviation, dtype=float), p.shape).copy(), detail)

    def __len__(self):
        return self.attacker_profit.size


# closed forms -----------------------------------------------------------------

def sandwich_profit(x, y, J, b, fee_rate, buyback_fee=0.0):
    """Profit of buying with ``b`` before a buyback of ``J`` and selling after.

    The attacker pays ``fee_rate`` on both legs; fees leave the pool, so K is
    fixed at x*y throughout.
    """
    x, y, J, b = (np.asarray(v, dtype=float) for v in (x, y, J, b))
    K = x * y
    y1 = y + b * (1.0 - fee_rate)
    tokens = x - K / y1
    y2 = y1 + J * (1.0 - buyback_fee)
    x3 = K / y2 + tokens * (1.0 - fee_rate)
    return (y2 - K / x3) - b


def best_sandwich(x, y, J, b_max, fee_rate, buyback_fee=0.0, n_grid: int = 65):
    """Grid search over b in [0, b_max]; returns (b, profit) per run.

    b = 0 is always on the grid, so the returned profit is >= 0.
    """
    x, y, J, b_max = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y, J, b_max)))
    frac = np.linspace(0.0, 1.0, n_grid)
    b = b_max[:, None] * frac[None, :]
    prof = sandwich_profit(x[:, None], y[:, None], J[:, None], b, fee_rate, buyback_fee)
    i = np.argmax(prof, axis=1)
    rows = np.arange(len(x))
    return b[rows, i], prof[rows, i]


def frontrun_sandwich(J, pool, fee_rate=None, b_max=None, holding_cost: float = 0.0, blocks: int = 50,
                      n_grid: int = 65) -> AttackOutcome:
    """Sandwich a known pending buyback on ``pool`` (a Pool or BatchPool).

    ``b_max`` defaults to the pool's stable reserve. The one-block exposure
    is charged ``holding_cost * b / blocks``.
    """
    if np.any(np.asarray(J) < 0):
        raise InvalidArgument("J must be >= 0")
    phi = pool.fee_rate if fee_rate is None else fee_rate
    cap = pool.y if b_max is None else b_max
    b, _ = best_sandwich(pool.x, pool.y, J, cap, phi, pool.buyback_fee, n_grid)
    gross = sandwich_profit(pool.x, pool.y, J, b, phi, pool.buyback_fee)
    profit = gross - holding_cost * b / blocks
    # the attacker simply stays out when nothing pays
    profit = np.where(b > 0, profit, 0.0)
    return AttackOutcome.from_profit(profit, b=b)


def flash_cost(x, y, size, direction, fee_rate):
    """Round trip of a one-block spike on reserves (x, y).

    ``size`` is in stablecoin. A sell spike sells ``size/P`` tokens and buys
    them back; a buy spike buys with ``size`` and sells the tokens back.
    Returns (cost, spiked_price).
    """
    x, y, size = (np.asarray(v, dtype=float) for v in (x, y, size))
    K = x * y
    if direction == SELL:
        s = size * x / y
        x1 = x + s * (1.0 - fee_rate)
        got = y - K / x1
        back = stable_for_tokens_out(x1, K / x1, K, s, fee_rate)
        return back - got, (K / x1) / x1
    y1 = y + size * (1.0 - fee_rate)
    tokens = x - K / y1
    x1 = K / y1
    x2 = x1 + tokens * (1.0 - fee_rate)
    return size - (y1 - K / x2), y1 / x1


# attacker bookkeeping ------------------------------------------------------------

class _Books:
    """Per-run attacker account wired into a world's hooks."""

    def __init__(self, world, budget: AttackBudget):
        R = world.runs
        self.budget = budget
        self.N = world.params.epoch_length
        self.cash = np.zeros(R)
        self.tokens = np.zeros(R)
        self.holding = np.zeros(R)
        self.capital = np.zeros(R)          # cumulative stable deployed by manipulation trades
        self.cap_total = budget.eps * world.pool.y.copy()
        self.trade = None                   # stable amount for the next epoch start
        self.flash = None                   # direction code per run (0 = none)
        self.flash_size = None
        self.sandwich = True
        self.J = []
        self.twap = []
        self._sw_tokens = np.zeros(R)
        self._sw_b = np.zeros(R)

    # trades on the live pool -------------------------------------------
    def buy(self, world, stable):
        got = world.pool.buy_tokens(stable)
        self.cash -= stable
        world.external_tokens += got
        return got

    def sell(self, world, tokens):
        got = world.pool.sell_tokens(tokens)
        self.cash += got
        world.external_tokens -= tokens
        return got

    def trade_stable(self, world, amount):
        """Signed stable amount: buy with a > 0, sell tokens worth -a < 0 at spot."""
        a = np.asarray(amount, dtype=float)
        buy = np.where(a > 0, a, 0.0)
        self.tokens += self.buy(world, buy)
        sell = np.where(a < 0, -a / world.pool.price, 0.0)
        self.sell(world, sell)
        self.tokens -= sell
        self.capital += np.abs(a)

    def unwind(self, world):
        t = self.tokens
        self.sell(world, np.where(t > 0, t, 0.0))
        short = np.where(t < 0, -t, 0.0)
        cost = np.where(short > 0, world.pool.stable_for_tokens(short), 0.0)
        got = world.pool.buy_tokens(cost)
        self.cash -= cost
        world.external_tokens += got
        self.tokens = np.zeros_like(t)

    @property
    def profit(self):
        return self.cash - self.holding

    # hooks -----------------------------------------------------------------
    def install(self, world):
        world.hooks = {
            "epoch_start": self._epoch_start,
            "after_blocks": self._after_blocks,
            "pre_buyback": self._pre_buyback,
            "post_buyback": self._post_buyback,
        }

    def _epoch_start(self, world):
        if self.trade is not None:
            self.trade_stable(world, self.trade)
            self.trade = None

    def _after_blocks(self, world):
        if self.flash is None:
            return
        pool = world.pool
        on_sell = self.flash == SELL
        on_buy = self.flash == BUY
        spiked = pool.price.copy()
        # sell spike: dump tokens worth `size`, read the price, buy them back
        s = np.where(on_sell, self.flash_size / pool.price, 0.0)
        self.sell(world, s)
        spiked = np.where(on_sell, pool.price, spiked)
        self.buy(world, np.where(on_sell, pool.stable_for_tokens(s), 0.0))
        # buy spike: the mirror image
        t = self.buy(world, np.where(on_buy, self.flash_size, 0.0))
        spiked = np.where(on_buy, pool.price, spiked)
        self.sell(world, t)
        # the spike sits on the last block of the epoch, whose reserves are the pool's
        hit = on_sell | on_buy
        world.blocks[:, -1] = np.where(hit, spiked, world.blocks[:, -1])
        world.twap = world.blocks.mean(axis=1)
        self.holding += np.where(hit, self.budget.holding_cost * self.flash_size / self.N, 0.0)
        self.flash = None

    def _pre_buyback(self, world, J):
        self.J.append(J.copy())
        self.twap.append(world.twap.copy())
        if not self.sandwich:
            return None
        pool = world.pool
        room = np.maximum(self.cap_total - self.capital, 0.0)
        b, _ = best_sandwich(pool.x, pool.y, J, room, pool.fee_rate, pool.buyback_fee)
        # charge the one-block exposure before deciding, so b = 0 wins when it should
        gross = sandwich_profit(pool.x, pool.y, J, b, pool.fee_rate, pool.buyback_fee)
        b = np.where(gross - self.budget.holding_cost * b / self.N > 0, b, 0.0)
        self._sw_b = b
        self._sw_tokens = self.buy(world, b)
        return None

    def _post_buyback(self, world):
        if np.any(self._sw_b > 0):
            self.sell(world, self._sw_tokens)
            self.holding += self.budget.holding_cost * self._sw_b / self.N
        self._sw_b = np.zeros(world.runs)
        self._sw_tokens = np.zeros(world.runs)
        # position held through this epoch
        self.holding += self.budget.holding_cost * np.abs(self.tokens) * world.pool.price


def _control(world, epochs: int):
    ctrl = world.clone()
    ctrl.hooks = {}
    J, tw = [], []
    for _ in range(epochs):
        ctrl.step()
        J.append(ctrl.last_J.copy())
        tw.append(ctrl.twap.copy())
    return np.array(J), np.array(tw)


def _finish(world, books, epochs, T_start, **detail):
    J_ctrl, tw_ctrl = _control(world, epochs)
    J_att = np.array(books.J)
    drain = (J_att.sum(axis=0) - J_ctrl.sum(axis=0)) / np.where(T_start > 0, T_start, 1.0)
    dev = np.log(tw_ctrl[0]) - np.log(books.twap[0])
    return AttackOutcome.from_profit(books.profit, drain, dev, J=J_att, J_control=J_ctrl, **detail)


# FGSM-Flash ---------------------------------------------------------------------

def _decision_after_flash(world, budget, direction):
    w = world.clone()
    b = _Books(w, budget)
    b.sandwich = False
    if direction:
        b.flash = np.full(w.runs, direction)
        b.flash_size = budget.eps * w.pool.y
    b.install(w)
    w.step()
    return w.last_J


def fgsm_flash(world, eps: float, holding_cost: float = 0.0005, direction=None) -> AttackOutcome:
    """One-block spike of ``eps * y`` then a sandwich of the buyback it feeds.

    The spike direction is the one that raises the policy's spend, found by
    running the epoch on clones with a sell spike and with a buy spike (a
    finite difference taken at the attack's own scale, which also works for
    the threshold rule where the small-step gradient is zero). Ties go to the
    sell. ``world`` is advanced one epoch under attack.
    """
    if not 0.0 <= eps <= 0.2:
        raise InvalidArgument("eps must lie in [0, 0.2]")
    budget = AttackBudget(eps, 1, holding_cost)
    if direction is None:
        j_sell = _decision_after_flash(world, budget, SELL)
        j_buy = _decision_after_flash(world, budget, BUY)
        direction = np.where(j_buy > j_sell, BUY, SELL)
    direction = np.broadcast_to(np.asarray(direction), (world.runs,))
    T_start = world.T.copy()
    probe = world.clone()
    books = _Books(world, budget)
    books.flash = direction if eps > 0 else np.zeros(world.runs, dtype=int)
    books.flash_size = budget.eps * world.pool.y
    books.install(world)
    world.step()
    world.hooks = {}
    return _finish(probe, books, 1, T_start, direction=direction)


# PGD-Sustained -------------------------------------------------------------------

def _fork(world, books=None):
    """Clone a world (and the attacker's books) without sharing state."""
    hooks, world.hooks = world.hooks, {}
    w = world.clone()
    world.hooks = hooks
    if books is None:
        return w, None
    b = _Books.__new__(_Books)
    b.__dict__.update({n: (v.copy() if isinstance(v, (np.ndarray, list)) else v) for n, v in books.__dict__.items()})
    b.install(w)
    return w, b


def strategy_profit(world, budget: AttackBudget, fractions) -> np.ndarray:
    """Attacker profit per run for one fixed plan.

    ``fractions`` gives one signed trade per epoch as a fraction of
    ``eps * y`` (positive buys). The world is cloned, not modified; the
    sandwich and the final unwind follow the same rules as pgd_sustained.
    """
    w, _ = _fork(world)
    books = _Books(w, budget)
    books.install(w)
    for f in fractions:
        books.trade = float(f) * books.cap_total
        w.step()
    books.unwind(w)
    return books.profit


def _scores(world, books, amounts, depth):
    """Best profit per run after each first trade, searching ``depth`` epochs."""
    out = []
    for a in amounts:
        w, b = _fork(world, books)
        over = b.capital + np.abs(a) > b.cap_total * (1 + 1e-12)
        b.trade = np.where(over, 0.0, a)
        w.step()
        if depth > 1:
            v = _scores(w, b, amounts, depth - 1).max(axis=0)
        else:
            b.unwind(w)
            v = b.profit
        out.append(np.where(over, -np.inf, v))
    return np.array(out)


def pgd_sustained(world, eps: float, k: int, grid=(-1.0, 0.0, 1.0), holding_cost: float = 0.0005,
                  lookahead: int = 1) -> AttackOutcome:
    """Multi-epoch manipulation with a position held between epochs.

    Each epoch the attacker picks a trade from ``grid`` (fractions of
    ``eps * y``, signed: positive buys), keeping cumulative capital within
    ``eps * y``, and sandwiches that epoch's buyback with whatever capital
    remains. The trade is chosen per run by exhaustive search ``lookahead``
    epochs ahead on cloned worlds; with ``lookahead >= k`` the whole plan is
    optimal. The position is closed after the last epoch. ``world`` is
    advanced ``k`` epochs under attack.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    budget = AttackBudget(eps, k, holding_cost)
    T_start = world.T.copy()
    probe, _ = _fork(world)
    books = _Books(world, budget)
    amounts = np.asarray(grid, dtype=float)[:, None] * books.cap_total[None, :]
    books.install(world)
    for t in range(k):
        scores = _scores(world, books, amounts, min(lookahead, k - t))
        # ties go to the first grid entry
        pick = np.argmax(scores, axis=0)
        books.trade = amounts[pick, np.arange(world.runs)]
        world.step()
    books.unwind(world)
    world.hooks = {}
    return _finish(probe, books, k, T_start, capital=books.capital.copy())


def enumerate_strategies(world, eps: float, k: int, grid=(-1.0, 0.0, 1.0), holding_cost: float = 0.0005):
    """Profit of every fixed plan in ``grid**k``; returns (plans, profits (P, runs)).

    Plans whose gross capital exceeds the budget score -inf.
    """
    budget = AttackBudget(eps, k, holding_cost)
    plans = list(itertools.product(grid, repeat=k))
    out = []
    for plan in plans:
        if sum(abs(g) for g in plan) > 1.0 + 1e-12:
            out.append(np.full(world.runs, -np.inf))
        else:
            out.append(strategy_profit(world, budget, plan))
    return plans, np.array(out)


# C&W-Arb -------------------------------------------------------------------------

def _saturation_after(world, delta, knee):
    """Step a clone with every block price scaled by exp(-delta).

    Returns (saturated, J, x, y) with the reserves seen just before the buyback.
    """
    w, _ = _fork(world)
    seen = {}

    def blocks(wd):
        wd.blocks = wd.blocks * np.exp(-delta)[:, None]

    def pre(wd, J):
        seen["x"], seen["y"] = wd.pool.x.copy(), wd.pool.y.copy()

    w.hooks = {"after_blocks": blocks, "pre_buyback": pre}
    w.step()
    u = getattr(w.policy, "last_u", None)
    if u is None:
        sat = w.last_J > 0
    else:
        sat = np.tanh(np.maximum(np.broadcast_to(u, (w.runs,)), 0.0)) >= knee
    return sat, w.last_J, seen["x"], seen["y"]


def cw_arbitrage(world, delta_max: float, rtol: float = 1e-6, knee: float = 0.99, holding_cost: float = 0.0005):
    """Smallest single-epoch deviation that saturates the controller.

    The deviation lowers every block price of the next epoch by a factor
    exp(-delta); saturation means tanh(max(u, 0)) >= ``knee`` (for a policy
    without a control signal, any positive spend). Bisection runs per run to
    ``rtol`` relative. Returns (delta, outcome) with delta = NaN where even
    ``delta_max`` does not saturate.

    The outcome prices the deviation as a sale that pushes ln P down by
    delta, held for the epoch and bought back just before the buyback, plus
    a sandwich of the saturated buyback.
    """
    if delta_max <= 0:
        raise InvalidArgument("delta_max must be > 0")
    R = world.runs
    sat0 = _saturation_after(world, np.zeros(R), knee)[0]
    sat_hi = _saturation_after(world, np.full(R, float(delta_max)), knee)[0]
    lo = np.zeros(R)
    hi = np.full(R, float(delta_max))
    active = ~sat0 & sat_hi
    while np.any(active & (hi - lo > rtol * hi)):
        mid = 0.5 * (lo + hi)
        s = _saturation_after(world, np.where(active, mid, 0.0), knee)[0]
        hi = np.where(active & s, mid, hi)
        lo = np.where(active & ~s, mid, lo)
    delta = np.where(sat0, 0.0, np.where(sat_hi, hi, np.nan))

    d = np.nan_to_num(delta)
    pool = world.pool
    phi = pool.fee_rate
    K = pool.x * pool.y
    tokens = pool.x * (np.exp(d / 2.0) - 1.0) / (1.0 - phi)
    x1 = pool.x + tokens * (1.0 - phi)
    got = pool.y - K / x1
    back = stable_for_tokens_out(x1, K / x1, K, tokens, phi)
    cost = back - got + holding_cost * got
    _, J, x, y = _saturation_after(world, d, knee)
    b, gross = best_sandwich(x, y, J, y, phi, pool.buyback_fee)
    sw = gross - holding_cost * b / world.params.epoch_length
    profit = np.where(np.isnan(delta), 0.0, sw - cost)
    return delta, AttackOutcome.from_profit(profit, deviation=d, delta=delta)


# scoring ---------------------------------------------------------------------------

def asr(outcomes) -> tuple[float, float]:
    """(attack success rate, robustness = 1 - ASR) over a batch.

    Accepts AttackOutcome objects (each may hold many runs) or booleans.
    """
    flags = []
    for o in outcomes if not isinstance(outcomes, AttackOutcome) else [outcomes]:
        flags.append(np.atleast_1d(o.success if isinstance(o, AttackOutcome) else np.asarray(o, dtype=bool)))
    if not flags:
        raise InvalidArgument("asr needs at least one outcome")
    s = np.concatenate(flags)
    if s.size == 0:
        raise InvalidArgument("asr needs at least one outcome")
    rate = float(np.mean(s))
    return rate, 1.0 - rate


def robustness(rate: float) -> float:
    return 1.0 - rate


def binomial_ci(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    p = successes / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return mid - half, mid + half


def sandwich_pool(x, y, fee_rate=0.0) -> Pool:
    """Convenience pool for closed-form checks."""
    return Pool(x, y, fee_rate=fee_rate)
