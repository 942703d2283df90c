"""Path simulation: distributional oracles, reproducibility, weak order."""

import math

import numpy as np
import pytest
from scipy import stats

from cvarep.model import Dynamics, ModelError, gbm_dynamics
from cvarep.simulate import (SimulationError, TimeGrid, brownian_increments,
                             simulate_euler, simulate_gbm_exact)

MU, SIGMA, X0, T = 0.05, 0.2, 0.8, 1.0


def _dyn(d=1):
    return gbm_dynamics(MU, SIGMA, np.full(d, X0))


def test_time_grid_validation():
    with pytest.raises(ModelError):
        TimeGrid(0, 1.0)
    with pytest.raises(ModelError):
        TimeGrid(10, 0.0)
    g = TimeGrid(4, 1.0)
    assert g.dt == 0.25
    np.testing.assert_allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_exact_terminal_mean_matches_lognormal():
    grid = TimeGrid(8, T)
    batch = simulate_gbm_exact(_dyn(), grid, L=50_000, seed=3)
    xT = batch.states[:, -1, 0]
    target = X0 * math.exp(MU * T)
    se = np.std(xT, ddof=1) / math.sqrt(len(xT))
    assert abs(np.mean(xT) - target) <= 4 * se


def test_exact_terminal_law_kolmogorov_smirnov():
    grid = TimeGrid(4, T)
    batch = simulate_gbm_exact(_dyn(), grid, L=20_000, seed=5)
    z = (np.log(batch.states[:, -1, 0] / X0) - (MU - 0.5 * SIGMA**2) * T) \
        / (SIGMA * math.sqrt(T))
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_bit_reproducible_and_chunk_invariant():
    grid = TimeGrid(10, T)
    full = simulate_euler(_dyn(2), grid, L=10, seed=42)
    again = simulate_euler(_dyn(2), grid, L=10, seed=42)
    assert np.array_equal(full.states, again.states)
    head = simulate_euler(_dyn(2), grid, L=6, seed=42)
    tail = simulate_euler(_dyn(2), grid, L=4, seed=42, first_path=6)
    assert np.array_equal(full.states, np.concatenate([head.states, tail.states]))
    other = simulate_euler(_dyn(2), grid, L=10, seed=43)
    assert not np.array_equal(full.states, other.states)


def test_exact_shares_euler_increments():
    grid = TimeGrid(10, T)
    e = simulate_euler(_dyn(), grid, L=5, seed=7)
    x = simulate_gbm_exact(_dyn(), grid, L=5, seed=7)
    assert np.array_equal(e.increments, x.increments)


def test_euler_weak_error_is_first_order():
    # Coupled to the exact scheme via common increments, the mean terminal
    # discrepancy of Euler shrinks ~linearly in dt.
    L = 40_000
    errs = []
    for N in (8, 16):
        grid = TimeGrid(N, T)
        e = simulate_euler(_dyn(), grid, L=L, seed=9)
        x = simulate_gbm_exact(_dyn(), grid, L=L, seed=9)
        errs.append(abs(np.mean(e.states[:, -1, 0] - x.states[:, -1, 0])))
    ratio = errs[0] / errs[1]
    assert 1.4 <= ratio <= 2.8, (errs, ratio)


def test_increment_moments_and_autocorrelation():
    grid = TimeGrid(50, T)
    dw = brownian_increments(grid, L=2000, n=1, seed=13)[:, :, 0]
    assert abs(np.mean(dw)) < 4 * math.sqrt(grid.dt / dw.size)
    assert abs(np.var(dw) / grid.dt - 1.0) < 0.02
    flat = dw.ravel()
    lag1 = np.corrcoef(flat[:-1], flat[1:])[0, 1]
    assert abs(lag1) < 0.02


def test_non_finite_state_raises():
    dyn = Dynamics(dim=1, noise_dim=1,
                   drift=lambda t, x: np.full_like(x, np.nan),
                   diffusion=lambda t, x: np.zeros((1, 1)),
                   x0=np.array([1.0]))
    with pytest.raises(SimulationError):
        simulate_euler(dyn, TimeGrid(4, 1.0), L=2, seed=0)


def test_exact_requires_gbm():
    dyn = Dynamics(dim=1, noise_dim=1, drift=lambda t, x: 0.0 * x,
                   diffusion=lambda t, x: np.eye(1), x0=np.array([1.0]))
    with pytest.raises(ModelError):
        simulate_gbm_exact(dyn, TimeGrid(4, 1.0), L=2, seed=0)
