import math

import numpy as np
import pytest
from scipy import integrate, stats

from dcbm.errors import InvalidArgument, ParseError
from dcbm.stochastic import (
    CorrelationSpec, JumpDiffusionParams, RngStream, gen_correlated, gen_path, replay_csv,
)


def kou_moments_by_quadrature(p):
    """Independent oracle: integrate the jump-size density numerically."""
    dens = lambda y: (p.p_up * p.eta_up * math.exp(-p.eta_up * y) if y > 0
                      else (1 - p.p_up) * p.eta_down * math.exp(p.eta_down * y))
    m1 = integrate.quad(lambda y: y * dens(y), -np.inf, 0)[0] + integrate.quad(lambda y: y * dens(y), 0, np.inf)[0]
    m2 = integrate.quad(lambda y: y * y * dens(y), -np.inf, 0)[0] + integrate.quad(lambda y: y * y * dens(y), 0, np.inf)[0]
    mean = p.mu - p.sigma**2 / 2 + p.jump_rate * m1
    var = p.sigma**2 + p.jump_rate * m2
    return mean, var


def test_deterministic_drift():
    x = gen_path(JumpDiffusionParams(mu=0.01, sigma=0.0, jump_rate=0.0), 50, RngStream(1))
    assert np.all(x == 0.01)


def test_gbm_reduction_is_normal():
    x = gen_path(JumpDiffusionParams(mu=0.0, sigma=0.03), 100_000, RngStream(2))
    n = x.size
    assert abs(stats.skew(x)) < 3 * math.sqrt(6 / n)
    assert abs(stats.kurtosis(x)) < 3 * math.sqrt(24 / n)


def test_moments_match_quadrature_oracle():
    p = JumpDiffusionParams(mu=0.002, sigma=0.02, jump_rate=0.3, p_up=0.3, eta_up=10, eta_down=5)
    mean, var = kou_moments_by_quadrature(p)
    assert p.mean() == pytest.approx(mean, rel=1e-9)
    assert p.variance() == pytest.approx(var, rel=1e-9)


def test_jump_count_rate():
    p = JumpDiffusionParams(sigma=0.0, jump_rate=0.2)
    g = RngStream(5).generator
    counts = g.poisson(p.jump_rate, size=1_000_000)
    assert abs(counts.mean() - 0.2) < 3 * math.sqrt(0.2 / counts.size)


def test_reproducible_and_index_addressed():
    p = JumpDiffusionParams(sigma=0.05, jump_rate=0.5)
    a = gen_path(p, 1000, RngStream(42, 7))
    b = gen_path(p, 1000, RngStream(42, 7))
    c = gen_path(p, 1000, RngStream(42, 8))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_invalid_params():
    with pytest.raises(InvalidArgument):
        JumpDiffusionParams(sigma=-1)
    with pytest.raises(InvalidArgument):
        JumpDiffusionParams(eta_up=1.0)
    with pytest.raises(InvalidArgument):
        CorrelationSpec(1.5)
    with pytest.raises(InvalidArgument):
        gen_path(JumpDiffusionParams(), 0, RngStream(1))


def test_correlation_limits():
    pd = JumpDiffusionParams(sigma=0.1)
    pp = JumpDiffusionParams(sigma=0.1)
    d, p = gen_correlated(pd, pp, CorrelationSpec(1.0), 1000, RngStream(3))
    assert np.allclose(d, p)
    d, p = gen_correlated(pd, pp, CorrelationSpec(-1.0), 1000, RngStream(3))
    assert np.corrcoef(d, p)[0, 1] == pytest.approx(-1.0)
    n = 100_000
    d, p = gen_correlated(pd, pp, CorrelationSpec(0.0), n, RngStream(4))
    assert abs(np.corrcoef(d, p)[0, 1]) < 3 / math.sqrt(n)


def write(tmp_path, text):
    f = tmp_path / "p.csv"
    f.write_text(text, encoding="utf-8")
    return f


def test_replay_increments(tmp_path):
    f = write(tmp_path, "timestamp,price\n2024-01-01T00:00:00,1.0\n2024-01-01T00:10:00,1.1\n2024-01-01T00:20:00,1.21\n")
    np.testing.assert_allclose(replay_csv(f), [math.log(1.1), math.log(1.1)], rtol=1e-12)


def test_replay_forward_fill(tmp_path):
    f = write(tmp_path, "timestamp,price\n2024-01-01,1.0\n2024-01-02,\n2024-01-03,2.0\n")
    np.testing.assert_allclose(replay_csv(f), [0.0, math.log(2)])


def test_replay_errors(tmp_path):
    with pytest.raises(ParseError):
        replay_csv(write(tmp_path, "timestamp,price\n2024-01-01,1.0\n"))
    with pytest.raises(ParseError, match="line 3"):
        replay_csv(write(tmp_path, "timestamp,price\n2024-01-01,1.0\n2024-01-02,-2\n"))
    with pytest.raises(ParseError, match="line 3"):
        replay_csv(write(tmp_path, "timestamp,price\n2024-01-02,1.0\n2024-01-01,2\n"))
    with pytest.raises(ParseError):
        replay_csv(tmp_path / "missing.csv")
