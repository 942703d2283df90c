"""Monte Carlo estimators: unbiasedness, common random numbers, consistency."""

import math

import numpy as np
import pytest

from cvarep.analytic import put_value
from cvarep.mc import (estimate_by_default_sampling, estimate_predefault_value,
                       estimate_riskfree_value)
from cvarep.model import HazardModel, ModelError, constant_hazard
from cvarep.simulate import TimeGrid

from conftest import put_setup


def _zero(t, x):
    return np.zeros(np.shape(np.asarray(x)[..., 0]))


def test_riskfree_value_matches_closed_form():
    claim, dyn, _, p = put_setup(d=1)
    grid = TimeGrid(100, p.T)
    est = estimate_riskfree_value(claim, dyn, grid, L=200_000, seed=1,
                                  scheme="exact")
    # the exact scheme samples the terminal law exactly, so this is unbiased
    assert est.within(put_value(p, 0.0, p.x0), n_std=4.0)


def test_zero_hazard_reduces_to_riskfree_bit_exactly():
    claim, dyn, _, p = put_setup(d=2)
    grid = TimeGrid(20, p.T)
    rf = estimate_riskfree_value(claim, dyn, grid, L=5000, seed=3)
    pre = estimate_predefault_value(claim, dyn, constant_hazard(0.0), _zero,
                                    grid, L=5000, seed=3)
    assert pre.mean == rf.mean and pre.std_error == rf.std_error


def test_constant_hazard_discount_identity_under_crn():
    # With Z = 0 and constant lam the pre-default value is e^{-lam T} times
    # the risk-free value pathwise, hence also for the estimates.
    claim, dyn, hazard, p = put_setup(d=1, lam=0.25)
    grid = TimeGrid(50, p.T)
    rf = estimate_riskfree_value(claim, dyn, grid, L=20_000, seed=5)
    pre = estimate_predefault_value(claim, dyn, hazard, _zero, grid,
                                    L=20_000, seed=5)
    assert pre.mean == pytest.approx(math.exp(-0.25 * p.T) * rf.mean,
                                     rel=1e-12)


def test_estimator_is_linear_in_the_recovery():
    claim, dyn, hazard, p = put_setup(d=1)
    grid = TimeGrid(50, p.T)

    def z1(t, x):
        return np.full(np.shape(np.asarray(x)[..., 0]), 0.7)

    def z2(t, x):
        return np.asarray(x)[..., 0]

    def z12(t, x):
        return z1(t, x) + z2(t, x)

    kw = dict(grid=grid, L=4000, seed=7)
    e1 = estimate_predefault_value(claim, dyn, hazard, z1, **kw).mean
    e2 = estimate_predefault_value(claim, dyn, hazard, z2, **kw).mean
    e0 = estimate_predefault_value(claim, dyn, hazard, _zero, **kw).mean
    e12 = estimate_predefault_value(claim, dyn, hazard, z12, **kw).mean
    assert e12 == pytest.approx(e1 + e2 - e0, rel=1e-12)


def test_default_sampling_agrees_with_reduced_form():
    claim, dyn, hazard, p = put_setup(d=1, lam=0.3)
    grid = TimeGrid(100, p.T)

    def recovery(t, x):
        return 0.4 * np.maximum(p.K - np.asarray(x)[..., 0], 0.0)

    reduced = estimate_predefault_value(claim, dyn, hazard, recovery, grid,
                                        L=30_000, seed=11)
    sampled = estimate_by_default_sampling(claim, dyn, hazard, recovery, grid,
                                           L=30_000, seed=12)
    tol = 3.0 * math.hypot(reduced.std_error, sampled.std_error)
    assert abs(reduced.mean - sampled.mean) <= tol


def test_default_sampling_zero_hazard_equals_riskfree():
    claim, dyn, _, p = put_setup(d=1)
    grid = TimeGrid(20, p.T)
    rf = estimate_riskfree_value(claim, dyn, grid, L=5000, seed=3)
    ds = estimate_by_default_sampling(claim, dyn, constant_hazard(0.0), _zero,
                                      grid, L=5000, seed=3)
    assert ds.mean == rf.mean


def test_default_sampling_requires_constant_intensity():
    claim, dyn, _, p = put_setup(d=1)

    def lam(t, x):
        return 0.1 + 0.05 * np.asarray(x)[..., 0]

    hazard = HazardModel(counterparty_intensity=lam)
    with pytest.raises(ModelError):
        estimate_by_default_sampling(claim, dyn, hazard, _zero,
                                     TimeGrid(10, p.T), L=100, seed=0)


def test_euler_and_exact_schemes_agree_weakly():
    claim, dyn, _, p = put_setup(d=1)
    grid = TimeGrid(200, p.T)
    eu = estimate_riskfree_value(claim, dyn, grid, L=50_000, seed=13)
    ex = estimate_riskfree_value(claim, dyn, grid, L=50_000, seed=13,
                                 scheme="exact")
    # common random numbers: the difference is pure discretization error
    assert abs(eu.mean - ex.mean) < 5e-4


def test_estimator_input_validation():
    claim, dyn, hazard, p = put_setup(d=1)
    grid = TimeGrid(10, p.T)
    with pytest.raises(ModelError):
        estimate_predefault_value(claim, dyn, hazard, _zero, grid, L=1, seed=0)
    with pytest.raises(ModelError):
        estimate_riskfree_value(claim, dyn, grid, L=100, seed=0,
                                scheme="milstein")
