"""Run configuration: flat sectioned key-value text (INI-style), parsed strictly.

Grammar: three sections [model], [claim], [solver]; each holds `key = value`
lines; `#` and `;` start comments.  Unknown sections or keys are rejected
with a message naming the offender, as are values that fail type coercion or
cross-field validation.  Every key can be overridden on the command line via
`--section.key value`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import List, Tuple

import numpy as np

from cvarep.analytic import ConstParams
from cvarep.model import (Claim, Dynamics, HazardModel, basket_put_claim,
                          constant_hazard, gbm_dynamics, identity_closeout,
                          investor_recovery_closeout, recovery_closeout)


class ConfigError(ValueError):
    """Unknown key, bad value, or failed cross-field validation."""


@dataclass(frozen=True)
class ModelSection:
    mu: float = 0.05
    sigma: float = 0.2
    x0: float = 0.8
    d: int = 5


@dataclass(frozen=True)
class ClaimSection:
    K: float = 1.0
    R: float = 0.4
    Rprime: float = 0.4
    lam: float = 0.1
    lambar: float = 0.0
    r: float = 0.03
    T: float = 1.0
    payoff: str = "basket-put"
    closeout: str = "recovery"


@dataclass(frozen=True)
class SolverSection:
    method: str = "analytic"
    convention: str = "replacement"
    N: int = 100
    L: int = 64
    J: int = 800
    Np: int = 800
    iters: int = 4000
    lr: float = 5e-3
    M: int = 5
    seed: int = 0
    tolerance: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    claim: ClaimSection = field(default_factory=ClaimSection)
    solver: SolverSection = field(default_factory=SolverSection)


# INI keys may differ from the (identifier-safe) dataclass field names.
_KEY_TO_FIELD = {
    ("claim", "lambda"): "lam",
    ("claim", "lambdabar"): "lambar",
    ("solver", "closeout-convention"): "convention",
}
_FIELD_TO_KEY = {v: k[1] for k, v in _KEY_TO_FIELD.items()}

METHODS = ("analytic", "mc", "pde", "dbsde", "dbsde-multifc")
CONVENTIONS = ("replacement", "riskfree", "none")
PAYOFFS = ("basket-put",)
CLOSEOUTS = ("recovery", "identity")


def _sections(cfg: RunConfig):
    return {"model": cfg.model, "claim": cfg.claim, "solver": cfg.solver}


def _coerce(section: str, key: str, raw: str, target_type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}: {exc}") from None


def _set_key(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    secs = _sections(cfg)
    if section not in secs:
        raise ConfigError(f"unknown section [{section}]")
    fname = _KEY_TO_FIELD.get((section, key), key)
    sec = secs[section]
    valid = {f.name: f.type for f in fields(sec)}
    if fname not in valid:
        raise ConfigError(f"unknown key {section}.{key}")
    target_type = type(getattr(sec, fname))
    secs[section] = replace(sec, **{fname: _coerce(section, key, raw, target_type)})
    return RunConfig(**secs)


def load_config(path) -> RunConfig:
    """Parse an INI file strictly on top of the defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (R vs r)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _set_key(cfg, section, key, raw)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: List[Tuple[str, str]]) -> RunConfig:
    """Apply ('section.key', 'value') pairs from the command line."""
    for dotted, raw in overrides:
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        cfg = _set_key(cfg, section, key, raw)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, sec in _sections(cfg).items():
        lines.append(f"[{name}]")
        for f in fields(sec):
            key = _FIELD_TO_KEY.get(f.name, f.name)
            lines.append(f"{key} = {getattr(sec, f.name)}")
        lines.append("")
    return "\n".join(lines)


def validate(cfg: RunConfig) -> None:
    m, c, s = cfg.model, cfg.claim, cfg.solver
    def bad(msg):
        raise ConfigError(msg)

    if m.d < 1:
        bad("model.d: dimension must be >= 1")
    if m.sigma <= 0:
        bad("model.sigma: volatility must be positive")
    if m.x0 <= 0:
        bad("model.x0: initial state must be positive")
    if c.K <= 0:
        bad("claim.K: strike must be positive")
    if not 0.0 <= c.R < 1.0:
        bad("claim.R: recovery must lie in [0,1)")
    if not 0.0 <= c.Rprime < 1.0:
        bad("claim.Rprime: recovery must lie in [0,1)")
    if c.lam < 0 or c.lambar < 0:
        bad("claim.lambda/lambdabar: hazard rates must be nonnegative")
    if c.r < 0:
        bad("claim.r: rate must be nonnegative")
    if c.T <= 0:
        bad("claim.T: maturity must be positive")
    if c.payoff not in PAYOFFS:
        bad(f"claim.payoff: unknown kind {c.payoff!r}, expected one of {PAYOFFS}")
    if c.closeout not in CLOSEOUTS:
        bad(f"claim.closeout: unknown kind {c.closeout!r}, expected one of {CLOSEOUTS}")
    if s.method not in METHODS:
        bad(f"solver.method: unknown method {s.method!r}, expected one of {METHODS}")
    if s.convention not in CONVENTIONS:
        bad("solver.closeout-convention: unknown convention "
            f"{s.convention!r}, expected one of {CONVENTIONS}")
    if s.method == "pde" and m.d != 1:
        bad("solver.method=pde requires model.d = 1 (the solver is one-dimensional)")
    if s.method == "analytic" and (c.payoff != "basket-put" or c.closeout != "recovery"):
        bad("solver.method=analytic requires the built-in basket-put claim "
            "with the recovery closeout")
    if s.N < 1 or s.L < 2 or s.J < 3 or s.Np < 1 or s.iters < 1 or s.M < 1:
        bad("solver: N, L, J, Np, iters, M must be positive (L >= 2, J >= 3)")
    if s.lr <= 0 or s.tolerance <= 0:
        bad("solver.lr and solver.tolerance must be positive")


def build_dynamics(cfg: RunConfig) -> Dynamics:
    m = cfg.model
    return gbm_dynamics(m.mu, m.sigma, np.full(m.d, m.x0))


def build_claim(cfg: RunConfig) -> Claim:
    c = cfg.claim
    if c.closeout == "recovery":
        closeout = recovery_closeout(c.R)
    else:
        closeout = identity_closeout()
    investor = investor_recovery_closeout(c.Rprime) if c.lambar > 0 else None
    return basket_put_claim(cfg.model.d, c.K, c.r, c.T, closeout,
                            investor_closeout=investor)


def build_hazard(cfg: RunConfig) -> HazardModel:
    c = cfg.claim
    return constant_hazard(c.lam, c.lambar if c.lambar > 0 else None)


def const_params(cfg: RunConfig) -> ConstParams:
    m, c = cfg.model, cfg.claim
    return ConstParams(r=c.r, mu=m.mu, sigma=m.sigma, lam=c.lam, R=c.R,
                       K=c.K, x0=m.x0, T=c.T, d=m.d)
