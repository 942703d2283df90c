"""Financial model data types shared by every solver.

All coefficient functions follow one vectorization convention: scalar fields
(cash-flow rate, discount rate, hazard rate, closeout, payoff) take a float
time ``t`` and a state array of shape ``(..., m)`` and return an array of
shape ``(...,)``.  Drift takes ``(t, x)`` with ``x`` of shape ``(..., m)``
and returns the same shape.  Pointwise diffusion maps a single state
``(m,)`` to the full ``(m, n)`` matrix; dynamics may additionally carry a
batched applier ``diffusion_dw(t, X, dW)`` that the simulators use when
present.

Everything here is immutable after construction and safe to share across
workers; coefficient functions must be re-entrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from cvarep import rng

ScalarField = Callable[[float, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Invalid model input (non-finite values, wrong dimensions, bad params)."""


@dataclass(frozen=True)
class GbmParams:
    """Per-asset drift and volatility of the built-in geometric Brownian motion."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class Dynamics:
    """Markov factor dynamics dX_t = drift(t,X_t) dt + diffusion(t,X_t) dW_t."""

    dim: int
    noise_dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    x0: np.ndarray
    diffusion_dw: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    gbm: Optional[GbmParams] = None

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ModelError("dimensions must be positive")
        x0 = np.asarray(self.x0, dtype=np.float64)
        if x0.shape != (self.dim,) or not np.all(np.isfinite(x0)):
            raise ModelError(f"x0 must be a finite vector of length {self.dim}")
        object.__setattr__(self, "x0", x0)


def gbm_dynamics(mu, sigma, x0) -> Dynamics:
    """Multi-dimensional GBM with diagonal diffusion: dX_i = mu_i X_i dt + sigma_i X_i dW_i."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    d = x0.shape[0]
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (d,)).copy()
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (d,)).copy()
    if np.any(sigma <= 0):
        raise ModelError("GBM volatilities must be positive")

    def drift(t, x):
        return mu * x

    def diffusion(t, x):
        return np.diag(sigma * np.asarray(x, dtype=np.float64))

    def diffusion_dw(t, x, dw):
        return sigma * x * dw

    return Dynamics(
        dim=d,
        noise_dim=d,
        drift=drift,
        diffusion=diffusion,
        x0=x0,
        diffusion_dw=diffusion_dw,
        gbm=GbmParams(mu=mu, sigma=sigma),
    )


@dataclass(frozen=True)
class HazardModel:
    """Default intensities: counterparty is mandatory, investor optional."""

    counterparty_intensity: ScalarField
    investor_intensity: Optional[ScalarField] = None


def constant_hazard(lam: float, lam_bar: Optional[float] = None) -> HazardModel:
    if lam < 0 or (lam_bar is not None and lam_bar < 0):
        raise ModelError("hazard intensities must be nonnegative")

    def make(level):
        def intensity(t, x):
            return np.full(np.shape(np.asarray(x)[..., 0]), float(level))

        return intensity

    return HazardModel(
        counterparty_intensity=make(lam),
        investor_intensity=None if lam_bar is None else make(lam_bar),
    )


@dataclass(frozen=True)
class CloseoutFunction:
    """Lump-sum recovery as a function of the reference value y.

    Incentive compatibility requires f(t,x,y) <= y on the counterparty side
    (>= y on the investor side) and 0 <= f(.,y2)-f(.,y1) <= y2-y1 for y1<y2.
    ``eval_ad``, when present, evaluates the same map on an autodiff tensor
    so the Deep BSDE rollout can backpropagate through it.
    """

    eval: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    side: str = "counterparty"
    eval_ad: Optional[Callable] = None

    def __post_init__(self):
        if self.side not in ("counterparty", "investor"):
            raise ModelError(f"unknown closeout side {self.side!r}")


def recovery_closeout(R: float) -> CloseoutFunction:
    """Counterparty closeout f(t,x,y) = R y^+ - y^-, R in [0,1)."""
    if not 0.0 <= R < 1.0:
        raise ModelError("recovery rate must lie in [0,1)")

    def ev(t, x, y):
        y = np.asarray(y, dtype=np.float64)
        return R * np.maximum(y, 0.0) - np.maximum(-y, 0.0)

    def ev_ad(t, x, y):
        from cvarep import autodiff as ad

        return ad.sub(ad.scale(ad.pos(y), R), ad.negpart(y))

    return CloseoutFunction(eval=ev, side="counterparty", eval_ad=ev_ad)


def investor_recovery_closeout(R_prime: float) -> CloseoutFunction:
    """Investor closeout f_bar(t,x,y) = y^+ - R' y^-, R' in [0,1)."""
    if not 0.0 <= R_prime < 1.0:
        raise ModelError("recovery rate must lie in [0,1)")

    def ev(t, x, y):
        y = np.asarray(y, dtype=np.float64)
        return np.maximum(y, 0.0) - R_prime * np.maximum(-y, 0.0)

    def ev_ad(t, x, y):
        from cvarep import autodiff as ad

        return ad.sub(ad.pos(y), ad.scale(ad.negpart(y), R_prime))

    return CloseoutFunction(eval=ev, side="investor", eval_ad=ev_ad)


def identity_closeout(side: str = "counterparty") -> CloseoutFunction:
    """Boundary case f(t,x,y) = y; makes the hazard terms cancel in the driver."""

    def ev(t, x, y):
        return np.asarray(y, dtype=np.float64)

    def ev_ad(t, x, y):
        return y

    return CloseoutFunction(eval=ev, side=side, eval_ad=ev_ad)


@dataclass(frozen=True)
class Claim:
    """Defaultable claim: terminal payoff, cash-flow rate, discounting, closeout."""

    terminal_payoff: Callable[[np.ndarray], np.ndarray]
    cashflow_rate: ScalarField
    discount_rate: ScalarField
    maturity: float
    closeout: CloseoutFunction
    investor_closeout: Optional[CloseoutFunction] = None

    def __post_init__(self):
        if not self.maturity > 0:
            raise ModelError("maturity must be positive")


def _const_field(level: float) -> ScalarField:
    def fn(t, x):
        return np.full(np.shape(np.asarray(x)[..., 0]), float(level))

    return fn


def basket_put_claim(d: int, K: float, r: float, T: float,
                     closeout: CloseoutFunction,
                     investor_closeout: Optional[CloseoutFunction] = None) -> Claim:
    """Put on the sum of d assets: phi(x) = (d K - sum_i x_i)^+, c = 0, constant r."""
    if K <= 0:
        raise ModelError("strike must be positive")
    if r < 0:
        raise ModelError("discount rate must be nonnegative")

    def payoff(x):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(d * K - x.sum(axis=-1), 0.0)

    return Claim(
        terminal_payoff=payoff,
        cashflow_rate=_const_field(0.0),
        discount_rate=_const_field(r),
        maturity=T,
        closeout=closeout,
        investor_closeout=investor_closeout,
    )


def bsde_driver(claim: Claim, hazard: HazardModel, t: float, x: np.ndarray,
                y, bilateral: bool = False):
    """Driver F(t,x,y) of the valuation BSDE.

    Unilateral: c + lam*f(t,x,y) - (r+lam)*y.  Bilateral additionally carries
    the investor terms: c + lam*f + lam_bar*f_bar - (r+lam+lam_bar)*y.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.isfinite(t)):
        raise ModelError("bsde_driver requires finite (t, x, y)")
    c = claim.cashflow_rate(t, x)
    r = claim.discount_rate(t, x)
    lam = hazard.counterparty_intensity(t, x)
    out = c + lam * claim.closeout.eval(t, x, y) - (r + lam) * y
    if bilateral:
        if claim.investor_closeout is None or hazard.investor_intensity is None:
            raise ModelError("bilateral driver needs investor closeout and intensity")
        lam_bar = hazard.investor_intensity(t, x)
        out = out + lam_bar * (claim.investor_closeout.eval(t, x, y) - y)
    return out


@dataclass(frozen=True)
class CloseoutReport:
    """Result of the Monte Carlo property check of a closeout function."""

    n_samples: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_closeout(f: CloseoutFunction, sample_box: dict, n_samples: int,
                      rng_seed: int, atol: float = 1e-12) -> CloseoutReport:
    """Sample (t,x,y) triples in the box and check the incentive-compatibility
    inequalities; violations are reported as data, not raised.

    ``sample_box`` maps 't', 'x', 'y' to (low, high) ranges; 'dim' (default 1)
    sets the state dimension.
    """
    if n_samples < 1:
        raise ModelError("n_samples must be >= 1")
    dim = int(sample_box.get("dim", 1))
    t_lo, t_hi = sample_box["t"]
    x_lo, x_hi = sample_box["x"]
    y_lo, y_hi = sample_box["y"]
    n_cols = 1 + dim + 2
    counters = rng.counters_3d(0, n_samples, n_cols, 1)[:, :, 0]
    u = rng.uniforms(rng_seed, rng.STREAM_SAMPLING, counters)
    ts = t_lo + (t_hi - t_lo) * u[:, 0]
    xs = x_lo + (x_hi - x_lo) * u[:, 1:1 + dim]
    y1 = y_lo + (y_hi - y_lo) * u[:, -2]
    y2 = y_lo + (y_hi - y_lo) * u[:, -1]
    lo = np.minimum(y1, y2)
    hi = np.maximum(y1, y2)

    violations = []
    for i in range(n_samples):
        t, x = float(ts[i]), xs[i]
        f_lo = float(f.eval(t, x, np.float64(lo[i])))
        f_hi = float(f.eval(t, x, np.float64(hi[i])))
        if f.side == "counterparty":
            if f_hi > hi[i] + atol:
                violations.append(("f>y", t, x.tolist(), float(hi[i]), f_hi))
        else:
            if f_lo < lo[i] - atol:
                violations.append(("f<y", t, x.tolist(), float(lo[i]), f_lo))
        df = f_hi - f_lo
        dy = hi[i] - lo[i]
        if df < -atol:
            violations.append(("decreasing", t, x.tolist(), float(lo[i]), float(hi[i]), df))
        if df > dy + atol:
            violations.append(("slope>1", t, x.tolist(), float(lo[i]), float(hi[i]), df, float(dy)))
    return CloseoutReport(n_samples=n_samples, violations=violations)
