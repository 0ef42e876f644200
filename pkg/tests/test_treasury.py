import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcbm.errors import InvalidArgument, SolvencyViolation
from dcbm.treasury import (
    CONSERVATION, OPS_CLAMPED, Treasury, apply_epoch, doomsday_closed_form, doomsday_trajectory,
)


def test_conservation_example():
    assert apply_epoch(Treasury(100.0), 10.0, 5.0).balance == 105.0


def test_ops_clamped_example():
    t = Treasury(5.0, ops_cost=10.0, accounting_mode=OPS_CLAMPED)
    assert apply_epoch(t, 0.0, 0.0).balance == 0.0


def test_overspend_raises():
    with pytest.raises(SolvencyViolation):
        apply_epoch(Treasury(10.0), 0.0, 20.0)


def test_bad_inputs():
    with pytest.raises(InvalidArgument):
        apply_epoch(Treasury(10.0), -1.0, 0.0)
    with pytest.raises(InvalidArgument):
        Treasury(1.0, accounting_mode="magic")


def test_doomsday_examples():
    assert doomsday_trajectory(100.0, [0.5, 0.5, 0.5]) == [100, 50, 25, 12.5]
    assert doomsday_trajectory(100.0, []) == [100.0]
    with pytest.raises(InvalidArgument):
        doomsday_trajectory(100.0, [1.0])


@given(st.floats(1e-3, 1e9), st.lists(st.floats(0.0, 0.999), max_size=200))
def test_doomsday_positive_and_matches_product(T0, lams):
    path = doomsday_trajectory(T0, lams)
    assert all(t > 0 for t in path)
    np.testing.assert_allclose(path, doomsday_closed_form(T0, lams), rtol=1e-9)


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 1)), max_size=50))
def test_conservation_law(steps):
    t = Treasury(1000.0, accounting_mode=CONSERVATION)
    R_total = J_total = 0.0
    for R, frac in steps:
        J = frac * (t.balance + R)
        t = apply_epoch(t, R, J)
        R_total += R
        J_total += J
    assert t.balance == pytest.approx(1000.0 + R_total - J_total, rel=1e-9, abs=1e-9)
    assert t.balance >= 0
