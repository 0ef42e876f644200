"""18-decimal fixed-point ("WAD") arithmetic.

Values are signed integers scaled by 10**18. Every operation truncates toward
zero, so results are bit-identical on every platform. Transcendentals are
evaluated with an internal 36-decimal scale and truncated back to WAD.

    >>> a = Wad.from_decimal_string("2")
    >>> str(a * Wad.from_decimal_string("3"))
    '6'
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import Counter
from decimal import ROUND_DOWN, Context, Decimal, InvalidOperation

from .errors import DomainError, InvalidArgument

WAD = 10**18
# int256 bounds, as on the EVM; intermediates are unbounded (double width and more).
MAX_RAW = 2**255 - 1
MIN_RAW = -(2**255)

_HP = 10**36  # internal scale for series evaluation
_LN2_HP = 693147180559945309417232121458176568
_SQRT2_HP = 1414213562373095048801688724209698079
_TANH_CUTOFF = 8 * WAD

_DEC = Context(prec=200)

_counter: contextvars.ContextVar[Counter | None] = contextvars.ContextVar("wad_op_counter", default=None)


@contextlib.contextmanager
def count_ops():
    """Count fixed-point primitive calls made inside the block.

    >>> with count_ops() as ops:
    ...     _ = Wad(WAD) * Wad(WAD)
    >>> ops["mul"]
    1
    """
    c = Counter()
    token = _counter.set(c)
    try:
        yield c
    finally:
        _counter.reset(token)


def _tick(name):
    c = _counter.get()
    if c is not None:
        c[name] += 1


def _check(raw: int) -> int:
    if raw > MAX_RAW or raw < MIN_RAW:
        raise OverflowError(f"fixed-point overflow: {raw}")
    return raw


def _tdiv(a: int, b: int) -> int:
    """Integer division truncating toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


class Wad(int):
    """Fixed-point number; ``int(w)`` is the raw scaled integer."""

    def __new__(cls, raw=0):
        return super().__new__(cls, _check(int(raw)))

    @classmethod
    def from_decimal_string(cls, s: str) -> Wad:
        try:
            d = Decimal(s.strip())
        except InvalidOperation as exc:
            raise InvalidArgument(f"not a decimal number: {s!r}") from exc
        if not d.is_finite():
            raise InvalidArgument(f"not a finite number: {s!r}")
        return cls(int(d.scaleb(18, _DEC).to_integral_value(rounding=ROUND_DOWN)))

    @classmethod
    def from_float(cls, v: float) -> Wad:
        # Decimal(float) is the exact binary value, so this is a pure truncation.
        return cls(int(Decimal(float(v)).scaleb(18, _DEC).to_integral_value(rounding=ROUND_DOWN)))

    @classmethod
    def from_int(cls, v: int) -> Wad:
        return cls(int(v) * WAD)

    def to_decimal_string(self) -> str:
        raw = int(self)
        sign = "-" if raw < 0 else ""
        whole, frac = divmod(abs(raw), WAD)
        if frac == 0:
            return f"{sign}{whole}"
        return f"{sign}{whole}.{frac:018d}".rstrip("0")

    def to_float(self) -> float:
        return int(self) / WAD

    def __str__(self):
        return self.to_decimal_string()

    def __repr__(self):
        return f"Wad({self.to_decimal_string()})"

    def __float__(self):
        return self.to_float()

    # arithmetic ----------------------------------------------------------
    def _other(self, other):
        # mixing with plain ints would silently mix scales
        if not isinstance(other, Wad):
            raise TypeError(f"cannot combine Wad with {type(other).__name__}")
        return other

    def __add__(self, other):
        other = self._other(other)
        _tick("add")
        return Wad(int(self) + int(other))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._other(other)
        _tick("add")
        return Wad(int(self) - int(other))

    def __rsub__(self, other):
        other = self._other(other)
        return other - self

    def __mul__(self, other):
        other = self._other(other)
        return wad_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._other(other)
        return wad_div(self, other)

    def __neg__(self):
        return Wad(-int(self))

    def __pos__(self):
        return self

    def __abs__(self):
        return Wad(abs(int(self)))


ZERO = Wad(0)
ONE = Wad(WAD)


def wad_mul(a: Wad, b: Wad) -> Wad:
    """a*b truncated toward zero. Raises OverflowError if the result leaves int256."""
    _tick("mul")
    return Wad(_tdiv(int(a) * int(b), WAD))


def wad_div(a: Wad, b: Wad) -> Wad:
    if int(b) == 0:
        raise ZeroDivisionError("wad_div by zero")
    _tick("div")
    return Wad(_tdiv(int(a) * WAD, int(b)))


def _exp_hp(r: int) -> int:
    """e**(r/_HP) at _HP scale for |r| <= ln2/2 * _HP (Taylor series)."""
    total = _HP
    term = _HP
    n = 1
    while term:
        term = _tdiv(term * r, n * _HP)
        total += term
        n += 1
    return total


def _ln_hp(x: int) -> int:
    """ln(x/_HP) at _HP scale for x > 0."""
    # range reduction: x = m * 2**k with m in [1/sqrt2, sqrt2)
    k = x.bit_length() - _HP.bit_length()
    m = x >> k if k >= 0 else x << -k
    while m >= _SQRT2_HP:
        m >>= 1
        k += 1
    while m * 2 < _SQRT2_HP:
        m <<= 1
        k -= 1
    # ln(m) = 2 atanh(s), s = (m-1)/(m+1), |s| < 0.172
    s = _tdiv((m - _HP) * _HP, m + _HP)
    s2 = _tdiv(s * s, _HP)
    total = 0
    power = s
    n = 1
    while power:
        total += _tdiv(power, n)
        power = _tdiv(power * s2, _HP)
        n += 2
    return k * _LN2_HP + 2 * total


def wad_ln(x: Wad) -> Wad:
    """Natural logarithm. Raises DomainError for x <= 0."""
    raw = int(x)
    if raw <= 0:
        raise DomainError(f"ln undefined for {Wad(raw)}")
    _tick("ln")
    return Wad(_tdiv(_ln_hp(raw * 10**18), 10**18))


def wad_exp(x: Wad) -> Wad:
    """e**x. Underflows to 0 below about -41.4; raises OverflowError when too large."""
    raw = int(x)
    _tick("exp")
    if raw < -42 * WAD:
        return ZERO
    if raw > 176 * WAD:
        raise OverflowError(f"exp overflow for {Wad(raw)}")
    r = raw * 10**18
    k = _tdiv(2 * r + (_LN2_HP if r >= 0 else -_LN2_HP), 2 * _LN2_HP)
    r -= k * _LN2_HP
    e = _exp_hp(r)
    e = e << k if k >= 0 else e >> -k
    return Wad(_tdiv(e, 10**18))


def _tanh_raw(a: int) -> int:
    """tanh for 0 <= a <= 8 WAD, returned at WAD scale."""
    r = -2 * a * 10**18
    k = _tdiv(2 * r - _LN2_HP, 2 * _LN2_HP)
    r -= k * _LN2_HP
    e = _exp_hp(r)
    e = e << k if k >= 0 else e >> -k
    return _tdiv((_HP - e) * WAD, _HP + e)


TANH_SATURATION = Wad(_tanh_raw(_TANH_CUTOFF))


def wad_tanh(x: Wad) -> Wad:
    """Hyperbolic tangent, saturating at tanh(8) (< 1) for |x| > 8."""
    raw = int(x)
    _tick("tanh")
    a = abs(raw)
    t = int(TANH_SATURATION) if a > _TANH_CUTOFF else _tanh_raw(a)
    return Wad(-t if raw < 0 else t)


def wad_max(a: Wad, b: Wad) -> Wad:
    return a if a >= b else b


def wad_min(a: Wad, b: Wad) -> Wad:
    return a if a <= b else b
