"""Finite-difference solver: exact solutions, closed-form oracle, Picard."""

import math

import numpy as np
import pytest

from cvarep import pde
from cvarep.analytic import bs_put, replacement_value_nonneg
from cvarep.model import (constant_hazard, gbm_dynamics,
                          investor_recovery_closeout, recovery_closeout)

from conftest import custom_claim, put_setup


def _gbm_coeffs(mu, sigma):
    a = lambda t, x: 0.5 * sigma**2 * np.asarray(x)[..., 0] ** 2
    b = lambda t, x: mu * np.asarray(x)[..., 0]
    return a, b


def test_linear_in_time_solution_is_exact():
    # d_t u + a u_xx + b u_x + 1 = 0, u(T,.) = 0  =>  u = T - t exactly:
    # the theta scheme integrates linear-in-time solutions without error.
    a, b = _gbm_coeffs(0.05, 0.3)
    grid = pde.GridSpec1D(x_min=0.0, x_max=3.0, J=50, T=2.0, Np=40)
    sol = pde.solve_linear_cauchy(a, b, lambda t, x: 0.0, lambda t, x: 1.0,
                                  lambda x: 0.0 * x[..., 0], grid,
                                  upper_boundary="extrapolate")
    expect = (grid.T - grid.t_nodes)[:, None] * np.ones(grid.J + 1)
    np.testing.assert_allclose(sol.values, expect, atol=1e-12)


def test_steady_state_is_exact():
    # k u = g with constant u = C is a fixed point of every theta step.
    C, k = 1.7, 0.3
    a, b = _gbm_coeffs(0.02, 0.25)
    grid = pde.GridSpec1D(x_min=0.0, x_max=3.0, J=50, T=2.0, Np=40)
    sol = pde.solve_linear_cauchy(a, b, lambda t, x: k, lambda t, x: k * C,
                                  lambda x: C + 0.0 * x[..., 0], grid,
                                  upper_boundary="extrapolate")
    np.testing.assert_allclose(sol.values, C, atol=1e-12)


def test_exponential_decay_second_order_accurate():
    k, T = 0.3, 1.0
    a, b = _gbm_coeffs(0.02, 0.25)
    grid = pde.GridSpec1D(x_min=0.0, x_max=3.0, J=20, T=T, Np=200)
    sol = pde.solve_linear_cauchy(a, b, lambda t, x: k, lambda t, x: 0.0,
                                  lambda x: 1.0 + 0.0 * x[..., 0], grid,
                                  upper_boundary="extrapolate")
    np.testing.assert_allclose(sol.values[0], math.exp(-k * T), atol=1e-5)


def test_riskfree_value_matches_black_scholes():
    claim, dyn, _, p = put_setup(d=1, mu=0.03)  # mu = r: plain Black-Scholes
    grid = pde.default_grid(dyn, p.T, J=1600, Np=1600)
    U, _ = pde.riskfree_closeout_solve(claim, dyn, constant_hazard(0.0), grid)
    xs = np.linspace(0.4, 1.6, 13)
    for x in xs:
        for t in (0.0, 0.5):
            assert U.value_at(t, x) == pytest.approx(bs_put(p, t, x),
                                                     abs=1e-4), (t, x)


def test_grid_refinement_is_second_order():
    claim, dyn, _, p = put_setup(d=1, mu=0.03)
    errs = []
    for n in (200, 400, 800):
        grid = pde.default_grid(dyn, p.T, J=n, Np=n)
        U, _ = pde.riskfree_closeout_solve(claim, dyn, constant_hazard(0.0),
                                           grid)
        errs.append(abs(U.value_at(0.0, p.x0) - bs_put(p, 0.0, p.x0)))
    assert errs[2] < errs[1] < errs[0]
    assert errs[0] / errs[2] > 4.0, errs


def test_first_picard_iterate_is_the_riskfree_closeout_value():
    claim, dyn, hazard, p = put_setup(d=1)
    grid = pde.default_grid(dyn, p.T, J=300, Np=300)
    report = pde.picard_solve(claim, dyn, hazard, grid)
    _, V0 = pde.riskfree_closeout_solve(claim, dyn, hazard, grid)
    gap = np.max(np.abs(report.iterates[1].values - V0.values))
    assert gap <= 1e-10


def test_picard_iterates_decrease_monotonically_and_converge():
    claim, dyn, hazard, p = put_setup(d=1, lam=0.4)
    grid = pde.default_grid(dyn, p.T, J=300, Np=300)
    report = pde.picard_solve(claim, dyn, hazard, grid, tol=1e-9)
    assert report.converged
    assert report.sup_norm_deltas[-1] < 1e-9
    for prev, nxt in zip(report.iterates, report.iterates[1:]):
        assert np.max(nxt.values - prev.values) <= 1e-8
    # geometric decay of the sup-norm deltas
    d = report.sup_norm_deltas
    assert all(b < a for a, b in zip(d, d[1:]))


def test_replacement_value_matches_closed_form():
    claim, dyn, hazard, p = put_setup(d=1)
    grid = pde.default_grid(dyn, p.T, J=800, Np=800)
    report = pde.picard_solve(claim, dyn, hazard, grid, keep_iterates=False)
    U, _ = pde.riskfree_closeout_solve(claim, dyn, constant_hazard(0.0), grid)
    u0 = U.value_at(0.0, p.x0)
    v0 = report.final.value_at(0.0, p.x0)
    assert v0 == pytest.approx(replacement_value_nonneg(p, u0, 0.0), rel=1e-6)


def test_sandwich_bounds_hold_gridwise():
    claim, dyn, hazard, p = put_setup(d=1, lam=0.5)
    grid = pde.default_grid(dyn, p.T, J=300, Np=300)
    curves = pde.cva_curves(claim, dyn, hazard, grid)
    bounds = pde.sandwich_bounds(claim, dyn, hazard, grid,
                                 V=curves["V"])
    tol = 1e-6
    assert np.all(bounds["J"].values <= curves["V"].values + tol)
    assert np.all(curves["V"].values <= curves["V0"].values + tol)
    assert np.all(curves["V0"].values <= curves["U"].values + tol)
    assert np.all(curves["Pi0"].values >= -tol)
    assert np.all(curves["Pi0"].values <= curves["Pi"].values + tol)
    # without a bilateral part the upper bound I coincides with U
    assert np.max(np.abs(bounds["I"].values - curves["U"].values)) <= tol


def test_bilateral_iterates_increase_from_psi0():
    K, T = 1.0, 2.0
    claim = custom_claim(lambda x: np.asarray(x)[..., 0] - K, r=0.02, T=T,
                         closeout=recovery_closeout(0.4),
                         investor_closeout=investor_recovery_closeout(0.3))
    dyn = gbm_dynamics(0.02, 0.25, np.array([1.0]))
    hazard = constant_hazard(0.15, 0.1)
    grid = pde.GridSpec1D(x_min=0.0, x_max=4.0, J=300, T=T, Np=300)
    report = pde.bilateral_picard_solve(claim, dyn, hazard, grid,
                                        upper_boundary="extrapolate")
    assert report.converged
    psi0 = report.iterates[0].values
    # the payoff changes sign, so both closeout sides are exercised
    assert report.final.values.min() < 0 < report.final.values.max()
    for prev, nxt in zip(report.iterates, report.iterates[1:]):
        assert np.min(nxt.values - prev.values) >= -1e-8
    assert np.min(report.final.values - psi0) >= -1e-8
    bounds = pde.sandwich_bounds(claim, dyn, hazard, grid,
                                 upper_boundary="extrapolate")
    assert np.all(report.final.values <= bounds["I"].values + 1e-6)


def test_figure1_sweep_matches_analytic_curve():
    claim, dyn, _, p = put_setup(d=1, mu=0.05, x0=1.0, r=0.05, R=0.5, T=10.0)
    grid = pde.default_grid(dyn, p.T, J=400, Np=400)
    from cvarep.analytic import figure1_relative_error

    lambdas = np.array([0.05, 0.3, 0.8])
    got = pde.figure1_sweep(claim, dyn, lambdas, grid)
    want = [figure1_relative_error(l, p.R, p.T) for l in lambdas]
    np.testing.assert_allclose(got, want, atol=2e-3)


def test_figure1_sweep_requires_ascending_hazards():
    claim, dyn, _, p = put_setup(d=1)
    grid = pde.default_grid(dyn, p.T, J=50, Np=50)
    with pytest.raises(pde.PdeError):
        pde.figure1_sweep(claim, dyn, [0.3, 0.1], grid)


def test_value_grid_bilinear_interpolation():
    t = np.linspace(0.0, 1.0, 5)
    x = np.linspace(0.0, 2.0, 9)
    vals = 2.0 * t[:, None] + 3.0 * x[None, :]
    vg = pde.ValueGrid(t_nodes=t, x_nodes=x, values=vals)
    assert vg.value_at(0.3, 1.1) == pytest.approx(2 * 0.3 + 3 * 1.1)
    assert vg.value_at(0.0, 0.0) == 0.0
    # clipped outside the lattice
    assert vg.value_at(2.0, 5.0) == pytest.approx(2.0 + 6.0)


def test_grid_and_boundary_validation():
    with pytest.raises(pde.PdeError):
        pde.GridSpec1D(x_min=1.0, x_max=0.0, J=10, T=1.0, Np=10)
    with pytest.raises(pde.PdeError):
        pde.GridSpec1D(x_min=0.0, x_max=1.0, J=1, T=1.0, Np=10)
    _, dyn, _, p = put_setup(d=1)
    grid = pde.default_grid(dyn, p.T, J=50, Np=50)
    claim, _, hazard, _ = put_setup(d=1)
    with pytest.raises(pde.PdeError):
        pde.picard_solve(claim, dyn, hazard, grid, upper_boundary="reflect")
    dyn5 = gbm_dynamics(0.05, 0.2, np.full(5, 0.8))
    with pytest.raises(pde.PdeError):
        pde.default_grid(dyn5, 1.0)
