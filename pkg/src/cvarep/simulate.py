"""Forward path simulation on uniform time grids.

Brownian increments are drawn from the counter-based stream keyed by
(seed, path index, step index, component), so a batch is bit-reproducible
for fixed (seed, L, N, n) no matter how generation is chunked or scheduled.
The exact GBM sampler reuses the same increments as the Euler scheme, which
makes Euler-vs-exact comparisons a low-variance common-random-numbers test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cvarep import rng
from cvarep.model import Dynamics, ModelError


class SimulationError(RuntimeError):
    """Non-finite state encountered while stepping a path batch."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_N = T."""

    N: int
    T: float

    def __post_init__(self):
        if self.N < 1:
            raise ModelError("time grid needs at least one step")
        if not self.T > 0:
            raise ModelError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass(frozen=True)
class PathBatch:
    """L simulated paths: states (L, N+1, m) and Brownian increments (L, N, n)."""

    states: np.ndarray
    increments: np.ndarray
    grid: TimeGrid
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def brownian_increments(grid: TimeGrid, L: int, n: int, seed: int,
                        first_path: int = 0) -> np.ndarray:
    """Increments dW of shape (L, N, n) for paths first_path..first_path+L."""
    counters = rng.counters_3d(first_path, L, grid.N, n)
    z = rng.normals(seed, rng.STREAM_BROWNIAN, counters)
    return z * np.sqrt(grid.dt)


def _apply_diffusion(dyn: Dynamics, t: float, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
    if dyn.diffusion_dw is not None:
        return dyn.diffusion_dw(t, x, dw)
    out = np.empty_like(x)
    for l in range(x.shape[0]):
        out[l] = dyn.diffusion(t, x[l]) @ dw[l]
    return out


def simulate_euler(dyn: Dynamics, grid: TimeGrid, L: int, seed: int,
                   first_path: int = 0, increments: np.ndarray | None = None) -> PathBatch:
    """Euler-Maruyama scheme X_{i+1} = X_i + mu(t_i,X_i) dt + sigma(t_i,X_i) dW_i."""
    if L < 1:
        raise ModelError("need at least one path")
    if increments is None:
        increments = brownian_increments(grid, L, dyn.noise_dim, seed, first_path)
    dt = grid.dt
    nodes = grid.nodes
    states = np.empty((L, grid.N + 1, dyn.dim))
    states[:, 0, :] = dyn.x0
    x = np.broadcast_to(dyn.x0, (L, dyn.dim)).copy()
    for i in range(grid.N):
        t = nodes[i]
        x = x + dyn.drift(t, x) * dt + _apply_diffusion(dyn, t, x, increments[:, i, :])
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))
            raise SimulationError(
                f"non-finite state at step {i + 1}, path {first_path + int(bad[0, 0])}")
        states[:, i + 1, :] = x
    return PathBatch(states=states, increments=increments, grid=grid, seed=seed)


def simulate_gbm_exact(dyn: Dynamics, grid: TimeGrid, L: int, seed: int,
                       first_path: int = 0, increments: np.ndarray | None = None) -> PathBatch:
    """Exact lognormal stepping for the built-in GBM, sharing Euler's increments."""
    if dyn.gbm is None:
        raise ModelError("exact sampler requires the built-in GBM dynamics")
    if L < 1:
        raise ModelError("need at least one path")
    if increments is None:
        increments = brownian_increments(grid, L, dyn.noise_dim, seed, first_path)
    mu, sigma = dyn.gbm.mu, dyn.gbm.sigma
    dt = grid.dt
    states = np.empty((L, grid.N + 1, dyn.dim))
    states[:, 0, :] = dyn.x0
    x = np.broadcast_to(dyn.x0, (L, dyn.dim)).copy()
    drift_term = (mu - 0.5 * sigma**2) * dt
    for i in range(grid.N):
        x = x * np.exp(drift_term + sigma * increments[:, i, :])
        states[:, i + 1, :] = x
    return PathBatch(states=states, increments=increments, grid=grid, seed=seed)


def dump_paths_csv(batch: PathBatch, path) -> None:
    """One row per (path, step): path,step,t,x_1,...,x_m."""
    from cvarep.report import format_float

    m = batch.states.shape[2]
    nodes = batch.grid.nodes
    with open(path, "w", newline="") as fh:
        fh.write("path,step,t," + ",".join(f"x_{j + 1}" for j in range(m)) + "\n")
        for l in range(batch.n_paths):
            for i in range(batch.grid.N + 1):
                row = [str(l), str(i), format_float(nodes[i])]
                row += [format_float(v) for v in batch.states[l, i]]
                fh.write(",".join(row) + "\n")
