"""Deep BSDE solvers for the nonlinear valuation equation.

The pre-default value solves a semilinear PDE whose BSDE form is

    dV_t = -F(t, X_t, V_t) dt + Z_t^T dW_t,    V_T = phi(X_T),
    F(t, x, y) = c + lam * f(t, x, y) - (r + lam) * y.

A single recurrent network plays the gradient process Z_t = sigma^T grad V;
the trainable scalar v plays V_0.  Training minimizes the mean squared
terminal mismatch over freshly simulated path batches.  The module provides
the single training run, the multi-trial average, the CVA solver (risk-free
run minus replacement run under common random numbers), the two-stage
risk-free-closeout pipeline, and a per-time-node feedforward baseline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from cvarep import autodiff as ad
from cvarep import rng
from cvarep.model import Claim, Dynamics, HazardModel, ModelError, constant_hazard
from cvarep.nn import AdamConfig, AdamState, FcSubnetworks, LstmStack, adam_step
from cvarep.simulate import PathBatch, TimeGrid, _apply_diffusion, simulate_euler, \
    simulate_gbm_exact


class DbsdeError(RuntimeError):
    """Training failure: non-finite rollout or too many skipped iterations."""


_ZERO_HAZARD = constant_hazard(0.0)

# A driver is callable(step, t, x_batch, y_tensor) -> tensor of per-path F values.
Driver = Callable[[int, float, np.ndarray, ad.Tensor], ad.Tensor]


def make_driver(claim: Claim, hazard: HazardModel, bilateral: bool = False) -> Driver:
    """Tape-recorded BSDE driver F(t,x,y) = c + lam f(t,x,y) - (r+lam) y."""
    if claim.closeout.eval_ad is None:
        raise ModelError("closeout function has no autodiff evaluation")
    if bilateral and (claim.investor_closeout is None
                      or hazard.investor_intensity is None):
        raise ModelError("bilateral driver needs investor closeout and intensity")

    def driver(i, t, x, y):
        c = claim.cashflow_rate(t, x)
        r = claim.discount_rate(t, x)
        lam = hazard.counterparty_intensity(t, x)
        f = claim.closeout.eval_ad(t, x, y)
        out = ad.add(ad.sub(ad.mul(f, lam), ad.mul(y, r + lam)), c)
        if bilateral:
            lam_bar = hazard.investor_intensity(t, x)
            f_bar = claim.investor_closeout.eval_ad(t, x, y)
            out = ad.add(out, ad.mul(ad.sub(f_bar, y), lam_bar))
        return out

    return driver


def make_frozen_recovery_driver(claim: Claim, hazard: HazardModel,
                                uhat: np.ndarray) -> Driver:
    """Linear driver c + lam f(t,x,Uhat_i) - (r+lam) y with the recovery input
    frozen to a precomputed path table uhat of shape (L, N)."""

    def driver(i, t, x, y):
        c = claim.cashflow_rate(t, x)
        r = claim.discount_rate(t, x)
        lam = hazard.counterparty_intensity(t, x)
        fz = claim.closeout.eval(t, x, uhat[:, i])
        return ad.add(ad.mul(y, -(r + lam)), c + lam * fz)

    return driver


def _net_step(net, i: int, t: float, T: float, x: np.ndarray, carry):
    if carry is not None:
        out, carry = net.forward(t / T, x, carry)
    else:
        out = net.forward(i, x)
    return out, carry


def rollout_loss(net, v: ad.Tensor, claim: Claim, dyn: Dynamics,
                 hazard: HazardModel, paths: PathBatch,
                 driver: Optional[Driver] = None) -> ad.Tensor:
    """Mean squared terminal mismatch of the discretized BSDE rollout.

    V_0 = v; V_{i+1} = V_i - F(t_i, X_i, V_i) dt + N(t_i, X_i)^T sigma dW_i;
    loss = mean over paths of (V_N - phi(X_N))^2.  The recurrent carry is
    reset at the start of the batch and threaded across time steps.
    """
    if driver is None:
        driver = make_driver(claim, hazard)
    grid = paths.grid
    dt = grid.dt
    nodes = grid.nodes
    L = paths.n_paths
    T = claim.maturity
    V = ad.add(np.zeros(L), v)
    carry = net.zero_carry(L) if hasattr(net, "zero_carry") else None
    for i in range(grid.N):
        t = float(nodes[i])
        x = paths.states[:, i, :]
        out, carry = _net_step(net, i, t, T, x, carry)
        sdw = _apply_diffusion(dyn, t, x, paths.increments[:, i, :])
        inc = ad.tsum(ad.mul(out, sdw), axis=1)
        F = driver(i, t, x, V)
        V = ad.add(ad.sub(V, ad.scale(F, dt)), inc)
        if not np.all(np.isfinite(V.data)):
            raise DbsdeError(f"non-finite rollout value at step {i + 1}")
    phi = claim.terminal_payoff(paths.states[:, grid.N, :])
    return ad.mean(ad.square(ad.sub(V, phi)))


@dataclass
class TrainConfig:
    """Knobs of a single training run."""

    N: int = 100
    L: int = 64
    iters: int = 4000
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    scheme: str = "euler"
    network: str = "lstm"
    hidden_extra: int = 10
    pilot_paths: int = 1024
    jitter: float = 0.2
    ma_window: int = 200
    ma_rel_tol: float = 5e-4
    max_skip_frac: float = 0.01
    log_path: Optional[str] = None


@dataclass
class TrainState:
    """Outcome of one training run."""

    net: object
    v: ad.Tensor
    adam: AdamState
    iterations: int
    loss_history: List[float]
    v_history: List[float]
    seed: int
    seconds: float
    converged: bool

    @property
    def final_v(self) -> float:
        return float(self.v.data)

    @property
    def params(self) -> dict:
        out = dict(self.net.params)
        out["v"] = self.v
        return out


@dataclass
class TrialSummary:
    """Average of M independently seeded training runs."""

    values: List[float]
    seconds: List[float]
    failures: List[str]
    states: List[object]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1))

    @property
    def total_seconds(self) -> float:
        return float(np.sum(self.seconds))


def _simulate(dyn: Dynamics, grid: TimeGrid, L: int, seed: int, scheme: str) -> PathBatch:
    if scheme == "exact":
        return simulate_gbm_exact(dyn, grid, L, seed)
    if scheme != "euler":
        raise ModelError(f"unknown scheme {scheme!r}")
    return simulate_euler(dyn, grid, L, seed)


def _pilot_value(claim: Claim, dyn: Dynamics, hazard: HazardModel,
                 grid: TimeGrid, cfg: TrainConfig) -> float:
    """Discounted-payoff pilot estimate of V_0 used to initialize v."""
    pb = _simulate(dyn, grid, cfg.pilot_paths, rng.derive_seed(cfg.seed, 0),
                   cfg.scheme)
    dt = grid.dt
    nodes = grid.nodes
    disc = np.zeros(cfg.pilot_paths)
    cash = np.zeros(cfg.pilot_paths)
    for i in range(grid.N):
        t = float(nodes[i])
        x = pb.states[:, i, :]
        cash += np.exp(-disc) * claim.cashflow_rate(t, x) * dt
        disc += (claim.discount_rate(t, x)
                 + hazard.counterparty_intensity(t, x)) * dt
    vals = cash + np.exp(-disc) * claim.terminal_payoff(pb.states[:, grid.N, :])
    return float(np.mean(vals))


def _build_network(cfg: TrainConfig, dim: int):
    hidden = dim + cfg.hidden_extra
    if cfg.network == "lstm":
        return LstmStack(dim, hidden, seed=cfg.seed)
    if cfg.network == "multifc":
        return FcSubnetworks(dim, hidden, cfg.N, seed=cfg.seed)
    raise ModelError(f"unknown network kind {cfg.network!r}")


def train(claim: Claim, dyn: Dynamics, hazard: HazardModel, cfg: TrainConfig,
          driver_factory: Optional[Callable[[PathBatch], Driver]] = None) -> TrainState:
    """One full training run: simulate -> rollout -> backprop -> Adam, with
    fresh paths every iteration and early stop on a flat moving average of v.

    ``driver_factory``, when given, builds the per-iteration driver from the
    fresh path batch (used by the frozen-recovery stage of the risk-free
    pipeline); by default the replacement-closeout driver is used.
    """
    if cfg.N < 1 or cfg.L < 2:
        raise ModelError("need N >= 1 and L >= 2")
    t_start = time.perf_counter()
    grid = TimeGrid(cfg.N, claim.maturity)
    net = _build_network(cfg, dyn.dim)

    pilot = _pilot_value(claim, dyn, hazard, grid, cfg)
    u = float(rng.uniforms(cfg.seed, rng.STREAM_JITTER,
                           np.zeros(1, dtype=np.uint64))[0])
    v = ad.param(pilot * (1.0 + cfg.jitter * (2.0 * u - 1.0)))
    params = dict(net.params)
    params["v"] = v
    param_list = list(params.values())
    adam = AdamState(config=cfg.adam)

    if driver_factory is None:
        default_driver = make_driver(claim, hazard)
        driver_factory = lambda paths: default_driver  # noqa: E731

    log_rows = []
    loss_history: List[float] = []
    v_history: List[float] = []
    converged = False
    performed = 0
    for it in range(cfg.iters):
        t0 = time.perf_counter()
        paths = _simulate(dyn, grid, cfg.L, rng.derive_seed(cfg.seed, it + 1),
                          cfg.scheme)
        driver = driver_factory(paths)
        for p in param_list:
            p.grad = None
        try:
            with ad.Tape() as tape:
                loss = rollout_loss(net, v, claim, dyn, hazard, paths, driver)
                grads = ad.backward(tape, loss, params=param_list)
        except DbsdeError:
            adam.skipped += 1
            performed += 1
            continue
        adam_step(adam, params, {name: grads[p] for name, p in params.items()})
        performed += 1
        loss_history.append(float(loss.data))
        v_history.append(float(v.data))
        if cfg.log_path is not None:
            log_rows.append((performed, float(loss.data), float(v.data),
                             time.perf_counter() - t0))
        w = cfg.ma_window
        if len(v_history) >= 2 * w and len(v_history) % w == 0:
            m1 = float(np.mean(v_history[-w:]))
            m0 = float(np.mean(v_history[-2 * w:-w]))
            if abs(m1 - m0) <= cfg.ma_rel_tol * max(abs(m1), 1e-12):
                converged = True
                break
    if adam.skipped > cfg.max_skip_frac * max(performed, 1):
        raise DbsdeError(
            f"{adam.skipped}/{performed} iterations skipped for non-finite results")

    if cfg.log_path is not None:
        from cvarep.report import format_float

        with open(cfg.log_path, "w", newline="") as fh:
            fh.write("iter,loss,v,seconds\n")
            for row in log_rows:
                fh.write(f"{row[0]},{format_float(row[1])},"
                         f"{format_float(row[2])},{format_float(row[3])}\n")

    return TrainState(net=net, v=v, adam=adam, iterations=performed,
                      loss_history=loss_history, v_history=v_history,
                      seed=cfg.seed, seconds=time.perf_counter() - t_start,
                      converged=converged)


def _collect_trials(run_one: Callable[[int], tuple], cfg: TrainConfig,
                    M: int) -> TrialSummary:
    values, seconds, failures, states = [], [], [], []
    for trial in range(1, M + 1):
        t0 = time.perf_counter()
        try:
            value, state = run_one(cfg.seed + trial)
        except DbsdeError as exc:
            failures.append(f"trial {trial}: {exc}")
            continue
        values.append(value)
        seconds.append(time.perf_counter() - t0)
        states.append(state)
    if len(values) < max(M - 1, 1):
        raise DbsdeError(f"too many failed trials: {failures}")
    return TrialSummary(values=values, seconds=seconds, failures=failures,
                        states=states)


def value_replacement(claim: Claim, dyn: Dynamics, hazard: HazardModel,
                      cfg: TrainConfig, M: int = 5) -> TrialSummary:
    """Average of M replacement-closeout training runs, seeds seed+1..seed+M."""

    def run_one(seed):
        state = train(claim, dyn, hazard, replace(cfg, seed=seed))
        return state.final_v, state

    return _collect_trials(run_one, cfg, M)


@dataclass(frozen=True)
class CvaResult:
    v_riskfree: float
    v_replacement: float
    cva: float
    riskfree: TrialSummary
    replacement: TrialSummary


def cva_solve(claim: Claim, dyn: Dynamics, hazard: HazardModel,
              cfg: TrainConfig, M: int = 5) -> CvaResult:
    """CVA = U - V: one multi-trial run with lam = 0 (risk-free value U) and
    one with the true hazard, sharing seeds so the path draws are common."""
    rep = value_replacement(claim, dyn, hazard, cfg, M)
    rf = value_replacement(claim, dyn, _ZERO_HAZARD, cfg, M)
    return CvaResult(v_riskfree=rf.mean, v_replacement=rep.mean,
                     cva=rf.mean - rep.mean, riskfree=rf, replacement=rep)


def _frozen_value_table(net, v0: float, claim: Claim, dyn: Dynamics,
                        paths: PathBatch) -> np.ndarray:
    """Roll the frozen lam=0 BSDE forward along the batch: Uhat(t_i, X_i)."""
    grid = paths.grid
    dt = grid.dt
    nodes = grid.nodes
    L = paths.n_paths
    T = claim.maturity
    u = np.full(L, v0)
    uhat = np.empty((L, grid.N))
    carry = net.zero_carry(L) if hasattr(net, "zero_carry") else None
    for i in range(grid.N):
        t = float(nodes[i])
        x = paths.states[:, i, :]
        uhat[:, i] = u
        out, carry = _net_step(net, i, t, T, x, carry)
        sdw = _apply_diffusion(dyn, t, x, paths.increments[:, i, :])
        F = claim.cashflow_rate(t, x) - claim.discount_rate(t, x) * u
        u = u - F * dt + np.sum(out.data * sdw, axis=1)
    return uhat


def value_riskfree_closeout(claim: Claim, dyn: Dynamics, hazard: HazardModel,
                            cfg: TrainConfig, M: int = 5) -> TrialSummary:
    """Two-stage risk-free-closeout pipeline, per trial:

    stage 1 trains the lam = 0 network for the risk-free value U; stage 2
    trains a second network for the linear BSDE whose recovery input is the
    frozen U reconstructed pathwise on each fresh batch.  Reported seconds
    cover both stages.
    """

    def run_one(seed):
        stage1 = train(claim, dyn, _ZERO_HAZARD, replace(cfg, seed=seed))

        def factory(paths):
            uhat = _frozen_value_table(stage1.net, stage1.final_v, claim, dyn,
                                       paths)
            return make_frozen_recovery_driver(claim, hazard, uhat)

        stage2 = train(claim, dyn, hazard,
                       replace(cfg, seed=rng.derive_seed(seed, 2)),
                       driver_factory=factory)
        return stage2.final_v, (stage1, stage2)

    return _collect_trials(run_one, cfg, M)


def train_multifc_baseline(claim: Claim, dyn: Dynamics, hazard: HazardModel,
                           cfg: TrainConfig, M: int = 5) -> TrialSummary:
    """Replacement-closeout run with one feedforward subnetwork per time node."""
    return value_replacement(claim, dyn, hazard, replace(cfg, network="multifc"), M)
