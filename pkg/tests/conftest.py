"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cvarep.analytic import ConstParams
from cvarep.model import (Claim, basket_put_claim, constant_hazard,
                          gbm_dynamics, recovery_closeout)


def const_field(level):
    """Constant scalar field in the (t, x) -> (...,) convention."""

    def fn(t, x):
        return np.full(np.shape(np.asarray(x)[..., 0]), float(level))

    return fn


def put_setup(d=1, mu=0.05, sigma=0.2, x0=0.8, K=1.0, r=0.03, lam=0.1,
              R=0.4, T=1.0):
    """Basket put with recovery closeout plus the matching dynamics/hazard."""
    claim = basket_put_claim(d, K, r, T, recovery_closeout(R))
    dyn = gbm_dynamics(mu, sigma, np.full(d, x0))
    hazard = constant_hazard(lam)
    params = ConstParams(r=r, mu=mu, sigma=sigma, lam=lam, R=R, K=K, x0=x0,
                         T=T, d=d)
    return claim, dyn, hazard, params


def custom_claim(payoff, r, T, closeout, c=0.0, investor_closeout=None):
    """Claim with an arbitrary terminal payoff and constant coefficients."""
    return Claim(terminal_payoff=payoff, cashflow_rate=const_field(c),
                 discount_rate=const_field(r), maturity=T, closeout=closeout,
                 investor_closeout=investor_closeout)


@pytest.fixture
def figure1_setup():
    """Long-dated at-the-money put of the closeout-comparison study."""
    return put_setup(d=1, mu=0.05, sigma=0.2, x0=1.0, K=1.0, r=0.05, lam=0.3,
                     R=0.5, T=10.0)
