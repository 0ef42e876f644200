import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcbm.errors import DomainError, InvalidArgument
from dcbm.wad import (
    MAX_RAW, ONE, TANH_SATURATION, WAD, ZERO, Wad, count_ops,
    wad_div, wad_exp, wad_ln, wad_mul, wad_tanh,
)

mpmath.mp.dps = 40


def W(s):
    return Wad.from_decimal_string(s)


def ref(w):
    return mpmath.mpf(int(w)) / WAD


def test_mul_examples():
    assert wad_mul(W("2"), W("3")) == W("6")
    assert wad_mul(W("0.000000000000000003"), W("0.5")) == W("0.000000000000000001")
    assert wad_mul(W("-0.000000000000000003"), W("0.5")) == W("-0.000000000000000001")


@given(st.integers(min_value=-(10**38), max_value=10**38))
def test_mul_identity(raw):
    assert wad_mul(ONE, Wad(raw)) == Wad(raw)


@given(st.integers(min_value=-(10**40), max_value=10**40))
def test_decimal_round_trip(raw):
    w = Wad(raw)
    assert Wad.from_decimal_string(w.to_decimal_string()) == w


def test_overflow_is_raised_not_wrapped():
    big = Wad(MAX_RAW)
    with pytest.raises(OverflowError):
        wad_mul(big, W("2"))
    with pytest.raises(OverflowError):
        Wad(MAX_RAW + 1)


def test_div_and_zero():
    assert wad_div(W("1"), W("3")) == W("0.333333333333333333")
    assert wad_div(W("-1"), W("3")) == W("-0.333333333333333333")
    with pytest.raises(ZeroDivisionError):
        wad_div(ONE, ZERO)


def test_mixing_plain_int_is_rejected():
    with pytest.raises(TypeError):
        ONE + 1


def test_parse_errors():
    with pytest.raises(InvalidArgument):
        W("abc")
    with pytest.raises(InvalidArgument):
        W("inf")


def test_ln_examples():
    assert wad_ln(ONE) == ZERO
    e = W("2.718281828459045235")
    assert abs(wad_ln(e).to_float() - 1.0) <= 1e-6
    with pytest.raises(DomainError):
        wad_ln(ZERO)
    with pytest.raises(DomainError):
        wad_ln(W("-1"))


def test_tanh_examples():
    assert wad_tanh(ZERO) == ZERO
    assert abs(wad_tanh(ONE).to_float() - 0.761594) <= 1e-6
    sat = wad_tanh(W("20"))
    assert sat == TANH_SATURATION and int(sat) < WAD


def test_exp_matches_reference():
    for s in ["0", "1", "-1", "10.5", "-30", "40"]:
        w = W(s)
        got, want = ref(wad_exp(w)), mpmath.exp(ref(w))
        assert abs(got - want) <= max(want * mpmath.mpf("1e-15"), mpmath.mpf("2e-18"))


def test_ln_oracle_grid():
    # 10^5 log-spaced points over [1e-6, 1e6]
    xs = np.logspace(-6, 6, 100_000)
    worst_rel = worst_abs = mpmath.mpf(0)
    for x in xs:
        w = Wad.from_float(x)
        want = mpmath.log(ref(w))
        err = abs(ref(wad_ln(w)) - want)
        worst_abs = max(worst_abs, err)
        if abs(want) > mpmath.mpf("1e-3"):
            worst_rel = max(worst_rel, err / abs(want))
    assert worst_rel <= 1e-6
    assert worst_abs <= 1e-9


def test_tanh_oracle_grid():
    xs = np.linspace(-8, 8, 100_000)
    worst = mpmath.mpf(0)
    for x in xs:
        w = Wad.from_float(x)
        worst = max(worst, abs(ref(wad_tanh(w)) - mpmath.tanh(ref(w))))
    assert worst <= 1e-6


def test_monotone_dense_grid():
    raws = [int(Wad.from_float(x)) for x in np.linspace(-12, 12, 20_001)]
    t = [int(wad_tanh(Wad(r))) for r in raws]
    assert all(a <= b for a, b in zip(t, t[1:]))
    pos = [int(Wad.from_float(x)) for x in np.logspace(-8, 8, 20_001)]
    ln = [int(wad_ln(Wad(r))) for r in pos]
    assert all(a <= b for a, b in zip(ln, ln[1:]))


@given(st.integers(min_value=-(10**30), max_value=10**30))
def test_tanh_strictly_below_one(raw):
    t = wad_tanh(Wad(raw))
    assert -WAD < int(t) < WAD


@given(st.integers(min_value=1, max_value=10**30), st.integers(min_value=1, max_value=10**30))
def test_ln_monotone_property(a, b):
    lo, hi = sorted((a, b))
    assert wad_ln(Wad(lo)) <= wad_ln(Wad(hi))


def test_op_counter():
    with count_ops() as ops:
        wad_tanh(wad_mul(ONE, ONE) + ONE)
    assert ops["mul"] == 1 and ops["add"] == 1 and ops["tanh"] == 1
    # counting is off outside the context
    with count_ops() as outer:
        pass
    wad_mul(ONE, ONE)
    assert outer["mul"] == 0
