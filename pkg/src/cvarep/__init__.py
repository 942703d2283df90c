"""Valuation engine for defaultable claims under risk-free and replacement closeout.

Four mutually cross-checking methods are provided: closed-form formulas for
the constant-parameter model family (`analytic`), Monte Carlo estimators for
the linear valuations (`mc`), a 1-D finite-difference/Picard solver for the
nonlinear valuation equation (`pde`), and a single-network Deep BSDE solver
built on a from-scratch autodiff/LSTM/Adam stack (`autodiff`, `nn`, `dbsde`).
"""

__version__ = "0.1.0"

from cvarep.model import (
    Claim,
    CloseoutFunction,
    Dynamics,
    HazardModel,
    bsde_driver,
    gbm_dynamics,
    basket_put_claim,
    recovery_closeout,
    investor_recovery_closeout,
    validate_closeout,
)
from cvarep.simulate import TimeGrid, PathBatch, simulate_euler, simulate_gbm_exact

__all__ = [
    "Claim",
    "CloseoutFunction",
    "Dynamics",
    "HazardModel",
    "TimeGrid",
    "PathBatch",
    "bsde_driver",
    "gbm_dynamics",
    "basket_put_claim",
    "recovery_closeout",
    "investor_recovery_closeout",
    "validate_closeout",
    "simulate_euler",
    "simulate_gbm_exact",
]
