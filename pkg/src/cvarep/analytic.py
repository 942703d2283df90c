"""Closed-form oracles for the constant-parameter model family.

Valid for claims with c = 0, nonnegative payoff, constant r and hazard rate,
and the recovery closeout f(y) = R y^+ - y^-.  The replacement and risk-free
closeout formulas are implementer-derived (see docs/derivations.md for the
PDE argument) and are cross-checked against the finite-difference solver and
the Monte Carlo estimators in the test suite before being used as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class AnalyticError(ValueError):
    """Inputs outside the validity region of a closed form."""


@dataclass(frozen=True)
class ConstParams:
    """Constant model parameters of the numerical-experiment family."""

    r: float
    mu: float
    sigma: float
    lam: float
    R: float
    K: float
    x0: float
    T: float
    d: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise AnalyticError("sigma must be positive")
        if self.lam < 0:
            raise AnalyticError("hazard rate must be nonnegative")
        if not 0.0 <= self.R < 1.0:
            raise AnalyticError("recovery must lie in [0,1)")
        if self.T <= 0:
            raise AnalyticError("maturity must be positive")


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_put(p: ConstParams, t: float, x: float) -> float:
    """Black-Scholes European put with rate r, vol sigma, strike K, maturity T-t."""
    if x <= 0:
        raise AnalyticError("spot must be positive")
    tau = p.T - t
    if tau <= 0:
        return max(p.K - x, 0.0)
    srt = p.sigma * math.sqrt(tau)
    d1 = (math.log(x / p.K) + (p.r + 0.5 * p.sigma**2) * tau) / srt
    d2 = d1 - srt
    return p.K * math.exp(-p.r * tau) * norm_cdf(-d2) - x * norm_cdf(-d1)


def put_value(p: ConstParams, t: float, x: float) -> float:
    """Discounted expected put payoff e^{-r tau} E[(K - X_T)^+] with the state
    drifting at mu (not necessarily r); reduces to bs_put when mu = r."""
    if x <= 0:
        raise AnalyticError("spot must be positive")
    tau = p.T - t
    if tau <= 0:
        return max(p.K - x, 0.0)
    srt = p.sigma * math.sqrt(tau)
    d1 = (math.log(x / p.K) + (p.mu + 0.5 * p.sigma**2) * tau) / srt
    d2 = d1 - srt
    return math.exp(-p.r * tau) * (
        p.K * norm_cdf(-d2) - x * math.exp(p.mu * tau) * norm_cdf(-d1))


def replacement_value_nonneg(p: ConstParams, U_val: float, t: float) -> float:
    """Pre-default value under replacement closeout for a nonnegative-value claim.

    For V >= 0 the nonlinear term lam*f(V) = lam*R*V, so the valuation PDE is
    linear with effective discount r + (1-R)*lam and V = exp(-(1-R)*lam*(T-t))*U.
    """
    if U_val < 0:
        raise AnalyticError("linearization requires a nonnegative risk-free value")
    return math.exp(-(1.0 - p.R) * p.lam * (p.T - t)) * U_val


def riskfree_closeout_value(p: ConstParams, U_val: float, t: float) -> float:
    """Pre-default value under risk-free closeout for a nonnegative-value claim.

    With recovery f(U) = R*U and e^{-r s} U(s, X_s) a martingale, the linear
    representation collapses to [R(1-e^{-lam(T-t)}) + e^{-lam(T-t)}] * U.
    """
    if U_val < 0:
        raise AnalyticError("formula requires a nonnegative risk-free value")
    decay = math.exp(-p.lam * (p.T - t))
    return (p.R * (1.0 - decay) + decay) * U_val


def figure1_relative_error(lam: float, R: float, T: float) -> float:
    """Relative CVA underestimate 1 - Pi0/Pi of the risk-free closeout.

    Both CVAs are proportional to U for this family, so the curve does not
    depend on x, r, sigma or K:
        Pi  = U * (1 - e^{-(1-R) lam T})
        Pi0 = U * (1-R) * (1 - e^{-lam T})
    """
    if lam < 0 or T <= 0 or not 0.0 <= R < 1.0:
        raise AnalyticError("need lam >= 0, T > 0, R in [0,1)")
    if lam == 0.0:
        return 0.0
    num = (1.0 - R) * (1.0 - math.exp(-lam * T))
    den = 1.0 - math.exp(-(1.0 - R) * lam * T)
    return 1.0 - num / den
