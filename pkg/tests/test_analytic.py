"""Closed forms checked against an independent binomial-lattice oracle."""

import math

import numpy as np
import pytest
from scipy import stats

from cvarep.analytic import (AnalyticError, ConstParams, bs_put,
                             figure1_relative_error, put_value,
                             replacement_value_nonneg,
                             riskfree_closeout_value)


def binomial_put(p: ConstParams, n: int = 20_000) -> float:
    """Lattice oracle for e^{-rT} E[(K - X_T)^+] with X drifting at mu."""
    dt = p.T / n
    u = math.exp(p.sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(p.mu * dt) - d) / (u - d)
    k = np.arange(n + 1)
    xT = p.x0 * u**k * d**(n - k)
    payoff = np.maximum(p.K - xT, 0.0)
    return math.exp(-p.r * p.T) * float(np.sum(stats.binom.pmf(k, n, q) * payoff))


PARAMS = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=0.1, R=0.4, K=1.0,
                     x0=0.8, T=1.0)


def test_put_value_matches_binomial_oracle():
    for x0 in (0.6, 0.8, 1.0, 1.3):
        p = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=0.1, R=0.4, K=1.0,
                        x0=x0, T=1.0)
        got = put_value(p, 0.0, x0)
        want = binomial_put(p)
        assert abs(got - want) < 5e-5, (x0, got, want)


def test_put_value_reduces_to_bs_put_when_mu_equals_r():
    p = ConstParams(r=0.03, mu=0.03, sigma=0.2, lam=0.1, R=0.4, K=1.0,
                    x0=0.8, T=1.0)
    assert put_value(p, 0.0, 0.8) == pytest.approx(bs_put(p, 0.0, 0.8),
                                                   abs=1e-15)


def test_put_value_limits():
    assert put_value(PARAMS, PARAMS.T, 0.7) == pytest.approx(0.3)
    assert put_value(PARAMS, PARAMS.T, 1.5) == 0.0
    deep = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=0.1, R=0.4, K=1.0,
                       x0=1e-8, T=1.0)
    # x -> 0: discounted strike
    assert put_value(deep, 0.0, 1e-8) == pytest.approx(
        math.exp(-0.03), rel=1e-6)
    with pytest.raises(AnalyticError):
        put_value(PARAMS, 0.0, -1.0)


def test_closeout_values_ordering_over_random_params():
    gen = np.random.default_rng(17)
    for _ in range(200):
        p = ConstParams(r=gen.uniform(0, 0.08), mu=gen.uniform(-0.05, 0.1),
                        sigma=gen.uniform(0.1, 0.5), lam=gen.uniform(0, 1.5),
                        R=gen.uniform(0, 0.95), K=gen.uniform(0.5, 2.0),
                        x0=gen.uniform(0.3, 2.5), T=gen.uniform(0.2, 12.0))
        U = put_value(p, 0.0, p.x0)
        V = replacement_value_nonneg(p, U, 0.0)
        V0 = riskfree_closeout_value(p, U, 0.0)
        assert 0.0 <= V <= V0 + 1e-15 <= U + 2e-15, (p, V, V0, U)


def test_replacement_value_is_decreasing_in_hazard():
    prev = None
    for lam in np.linspace(0.0, 2.0, 15):
        p = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=lam, R=0.4, K=1.0,
                        x0=0.8, T=1.0)
        v = replacement_value_nonneg(p, 1.0, 0.0)
        if prev is not None:
            assert v < prev
        prev = v


def test_riskfree_closeout_limits():
    U = 1.3
    p0 = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=0.0, R=0.4, K=1.0,
                     x0=0.8, T=1.0)
    assert riskfree_closeout_value(p0, U, 0.0) == pytest.approx(U)
    p_inf = ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=200.0, R=0.4, K=1.0,
                        x0=0.8, T=1.0)
    assert riskfree_closeout_value(p_inf, U, 0.0) == pytest.approx(0.4 * U)


def test_figure1_relative_error_curve():
    assert figure1_relative_error(0.0, 0.5, 10.0) == 0.0
    assert figure1_relative_error(0.3, 0.5, 10.0) == pytest.approx(0.388435,
                                                                   abs=1e-6)
    # lam -> infinity limit is R
    assert figure1_relative_error(500.0, 0.5, 10.0) == pytest.approx(0.5,
                                                                     abs=1e-9)
    # increasing in lam
    vals = [figure1_relative_error(l, 0.5, 10.0)
            for l in np.linspace(0.01, 2.0, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(AnalyticError):
        figure1_relative_error(-0.1, 0.5, 10.0)


def test_const_params_validation():
    with pytest.raises(AnalyticError):
        ConstParams(r=0.03, mu=0.05, sigma=0.0, lam=0.1, R=0.4, K=1.0,
                    x0=0.8, T=1.0)
    with pytest.raises(AnalyticError):
        ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=0.1, R=1.0, K=1.0,
                    x0=0.8, T=1.0)
    with pytest.raises(AnalyticError):
        ConstParams(r=0.03, mu=0.05, sigma=0.2, lam=-0.1, R=0.4, K=1.0,
                    x0=0.8, T=1.0)
