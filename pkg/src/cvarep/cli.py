"""Command-line front end.

Subcommands: value, cva, figure1, table, validate-closeout, gradcheck.
Every solver knob lives in the RunConfig; `--config FILE` loads an INI file
and any `--section.key VALUE` flag overrides a single field.  The env var
XVA_SEED overrides the seed last.  Exit codes: 0 success, 2 configuration
or validation error, 3 solver failure.  Report commands write a CSV and
render a matplotlib PNG next to it.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import List, Optional, Tuple

import numpy as np

from cvarep import analytic, dbsde, mc, pde
from cvarep.config import (ConfigError, RunConfig, apply_overrides, build_claim,
                           build_dynamics, build_hazard, const_params,
                           load_config, validate)
from cvarep.model import ModelError, constant_hazard, validate_closeout
from cvarep.nn import AdamConfig
from cvarep.pde import PdeError, PicardDivergence
from cvarep.simulate import SimulationError, TimeGrid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_SOLVER_ERRORS = (dbsde.DbsdeError, PdeError, PicardDivergence, SimulationError)


def _parse_overrides(extra: List[str]) -> List[Tuple[str, str]]:
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            dotted, value = body.split("=", 1)
            i += 1
        else:
            dotted = body
            if i + 1 >= len(extra):
                raise ConfigError(f"flag --{dotted} is missing a value")
            value = extra[i + 1]
            i += 2
        if "." not in dotted:
            raise ConfigError(f"unknown flag --{dotted} (overrides use --section.key)")
        pairs.append((dotted, value))
    return pairs


def _resolve_config(args, extra: List[str]) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, _parse_overrides(extra))
    env_seed = os.environ.get("XVA_SEED")
    if env_seed is not None:
        cfg = apply_overrides(cfg, [("solver.seed", env_seed)])
    validate(cfg)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def _train_config(cfg: RunConfig) -> dbsde.TrainConfig:
    s = cfg.solver
    return dbsde.TrainConfig(N=s.N, L=s.L, iters=s.iters, seed=s.seed,
                             adam=AdamConfig(lr=s.lr))


def _write_summary(out, rows) -> None:
    from cvarep import report

    report.write_csv(out, ["dim", "method", "closeout", "value", "std", "seconds"],
                     rows)
    report.render_table_png([r[0] for r in rows], [r[3] for r in rows],
                            [r[4] for r in rows], report.png_path_for(out))


def _solve_value(cfg: RunConfig) -> Tuple[float, float]:
    """Returns (value, std) at (t=0, x=x0) per the configured method/convention."""
    s = cfg.solver
    claim = build_claim(cfg)
    dyn = build_dynamics(cfg)
    hazard = build_hazard(cfg)
    convention = s.convention

    if s.method == "analytic":
        if cfg.model.d != 1:
            raise ConfigError("solver.method=analytic requires model.d = 1 "
                              "(no closed form for the basket payoff)")
        p = const_params(cfg)
        U = analytic.put_value(p, 0.0, p.x0)
        if convention == "none":
            return U, 0.0
        if convention == "replacement":
            return analytic.replacement_value_nonneg(p, U, 0.0), 0.0
        return analytic.riskfree_closeout_value(p, U, 0.0), 0.0

    if s.method == "mc":
        if convention != "none":
            raise ConfigError(
                "solver.method=mc computes the risk-free value only; use "
                "closeout-convention=none (the nonlinear closeouts are handled "
                "by the pde and dbsde methods)")
        grid = TimeGrid(s.N, cfg.claim.T)
        est = mc.estimate_riskfree_value(claim, dyn, grid, s.L, s.seed)
        return est.mean, est.std_error

    if s.method == "pde":
        grid = pde.default_grid(dyn, cfg.claim.T, J=s.J, Np=s.Np)
        x0 = float(dyn.x0[0])
        if convention == "none":
            U, _ = pde.riskfree_closeout_solve(claim, dyn, hazard, grid)
            return U.value_at(0.0, x0), 0.0
        if convention == "riskfree":
            _, V0 = pde.riskfree_closeout_solve(claim, dyn, hazard, grid)
            return V0.value_at(0.0, x0), 0.0
        rep = pde.picard_solve(claim, dyn, hazard, grid, tol=s.tolerance,
                               keep_iterates=False)
        return rep.final.value_at(0.0, x0), 0.0

    # dbsde / dbsde-multifc
    tc = _train_config(cfg)
    if s.method == "dbsde-multifc":
        if convention == "riskfree":
            raise ConfigError("the multi-FC baseline supports "
                              "closeout-convention replacement or none")
        hz = hazard if convention == "replacement" else constant_hazard(0.0)
        summary = dbsde.train_multifc_baseline(claim, dyn, hz, tc, M=s.M)
        return summary.mean, summary.std
    if convention == "riskfree":
        summary = dbsde.value_riskfree_closeout(claim, dyn, hazard, tc, M=s.M)
    elif convention == "none":
        summary = dbsde.value_replacement(claim, dyn, constant_hazard(0.0), tc,
                                          M=s.M)
    else:
        summary = dbsde.value_replacement(claim, dyn, hazard, tc, M=s.M)
    return summary.mean, summary.std


def _solve_cva(cfg: RunConfig) -> Tuple[float, float]:
    """CVA at (0, x0): U minus the configured pre-default value."""
    s = cfg.solver
    if s.convention == "none":
        raise ConfigError("cva needs closeout-convention replacement or riskfree")
    if s.method == "analytic":
        if cfg.model.d != 1:
            raise ConfigError("solver.method=analytic requires model.d = 1 "
                              "(no closed form for the basket payoff)")
        p = const_params(cfg)
        U = analytic.put_value(p, 0.0, p.x0)
        if s.convention == "replacement":
            return U - analytic.replacement_value_nonneg(p, U, 0.0), 0.0
        return U - analytic.riskfree_closeout_value(p, U, 0.0), 0.0
    if s.method == "mc":
        raise ConfigError("solver.method=mc cannot price the nonlinear closeout; "
                          "use pde or dbsde for cva")
    if s.method == "pde":
        claim = build_claim(cfg)
        dyn = build_dynamics(cfg)
        hazard = build_hazard(cfg)
        grid = pde.default_grid(dyn, cfg.claim.T, J=s.J, Np=s.Np)
        curves = pde.cva_curves(claim, dyn, hazard, grid, tol=s.tolerance)
        key = "Pi" if s.convention == "replacement" else "Pi0"
        return curves[key].value_at(0.0, float(dyn.x0[0])), 0.0
    if s.method == "dbsde-multifc":
        raise ConfigError("cva is computed with the single-network dbsde method")
    claim = build_claim(cfg)
    dyn = build_dynamics(cfg)
    hazard = build_hazard(cfg)
    tc = _train_config(cfg)
    if s.convention == "replacement":
        result = dbsde.cva_solve(claim, dyn, hazard, tc, M=s.M)
        std = float(np.hypot(result.riskfree.std, result.replacement.std))
        return result.cva, std
    rf = dbsde.value_replacement(claim, dyn, constant_hazard(0.0), tc, M=s.M)
    v0 = dbsde.value_riskfree_closeout(claim, dyn, hazard, tc, M=s.M)
    return rf.mean - v0.mean, float(np.hypot(rf.std, v0.std))


def cmd_value(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    t0 = time.perf_counter()
    value, std = _solve_value(cfg)
    seconds = time.perf_counter() - t0
    print(f"value = {value!r} +/- {std!r}  ({seconds:.2f} s)")
    if args.out:
        _write_summary(args.out, [(cfg.model.d, cfg.solver.method,
                                   cfg.solver.convention, value, std, seconds)])
    return EXIT_OK


def cmd_cva(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    t0 = time.perf_counter()
    value, std = _solve_cva(cfg)
    seconds = time.perf_counter() - t0
    print(f"cva = {value!r} +/- {std!r}  ({seconds:.2f} s)")
    if args.out:
        _write_summary(args.out, [(cfg.model.d, cfg.solver.method,
                                   "cva-" + cfg.solver.convention, value, std,
                                   seconds)])
    return EXIT_OK


def cmd_figure1(args, extra) -> int:
    from cvarep import report

    cfg = _resolve_config(args, extra)
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    if args.lambda_min < 0 or args.lambda_max <= args.lambda_min:
        raise ConfigError("need 0 <= lambda-min < lambda-max")
    # the study is one-dimensional by construction
    cfg = apply_overrides(cfg, [("model.d", "1")])
    lambdas = np.linspace(args.lambda_min, args.lambda_max, args.steps)
    ana = np.array([analytic.figure1_relative_error(l, cfg.claim.R, cfg.claim.T)
                    for l in lambdas])
    claim = build_claim(cfg)
    dyn = build_dynamics(cfg)
    grid = pde.default_grid(dyn, cfg.claim.T, J=cfg.solver.J, Np=cfg.solver.Np)
    fd = pde.figure1_sweep(claim, dyn, lambdas, grid, tol=cfg.solver.tolerance)
    report.write_csv(args.out,
                     ["lambda", "relative_error_analytic", "relative_error_pde"],
                     zip(lambdas, ana, fd))
    report.render_figure1_png(lambdas, ana, fd, report.png_path_for(args.out))
    gap = float(np.max(np.abs(ana - fd)))
    print(f"wrote {args.out} ({args.steps} rows, max column gap {gap!r})")
    return EXIT_OK


def cmd_table(args, extra) -> int:
    from cvarep import report

    cfg = _resolve_config(args, extra)
    try:
        dims = [int(tok) for tok in args.dims.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--dims must be a comma list of integers, got {args.dims!r}")
    if not dims or any(d < 1 for d in dims):
        raise ConfigError("--dims needs at least one positive dimension")
    rows = []
    for d in dims:
        dim_cfg = apply_overrides(cfg, [("model.d", str(d))])
        validate(dim_cfg)
        t0 = time.perf_counter()
        if args.cva:
            value, std = _solve_cva(dim_cfg)
        else:
            value, std = _solve_value(dim_cfg)
        rows.append((d, value, std, time.perf_counter() - t0))
        print(f"d={d}: {'cva' if args.cva else 'value'} = {value!r} +/- {std!r} "
              f"({rows[-1][3]:.2f} s)")
    report.write_csv(args.out, ["dim", "value", "std", "seconds"], rows)
    report.render_table_png([r[0] for r in rows], [r[1] for r in rows],
                            [r[2] for r in rows], report.png_path_for(args.out),
                            ylabel="cva" if args.cva else "value")
    return EXIT_OK


def cmd_validate_closeout(args, extra) -> int:
    cfg = _resolve_config(args, extra)
    claim = build_claim(cfg)
    box = {"t": (0.0, cfg.claim.T), "x": (0.0, 3.0 * cfg.model.x0),
           "y": (-args.y_range, args.y_range), "dim": cfg.model.d}
    result = validate_closeout(claim.closeout, box, args.n_samples,
                               rng_seed=cfg.solver.seed)
    if result.ok:
        print(f"closeout ok: {result.n_samples} samples, no violations")
        return EXIT_OK
    print(f"closeout FAILED: {len(result.violations)} violations "
          f"in {result.n_samples} samples")
    for v in result.violations[:10]:
        print(f"  {v}")
    return EXIT_SOLVER


def _gradcheck_cases(seed: int):
    """Named (make_loss, params, eps, tol) finite-difference cases."""
    from cvarep import autodiff as ad
    from cvarep import model as mdl
    from cvarep import nn
    from cvarep.simulate import simulate_euler

    gen = np.random.default_rng(seed)
    a = ad.param(gen.standard_normal((3, 4)))
    b = ad.param(gen.standard_normal((3, 4)))
    w = ad.param(gen.standard_normal((4, 2)))
    bias = ad.param(gen.standard_normal(4))
    s = ad.param(gen.standard_normal(()))

    cases = [
        ("add", lambda: ad.mean(ad.square(ad.add(a, b))), [a, b]),
        ("add-bias", lambda: ad.mean(ad.square(ad.add(a, bias))), [a, bias]),
        ("sub", lambda: ad.mean(ad.square(ad.sub(a, b))), [a, b]),
        ("mul", lambda: ad.mean(ad.square(ad.mul(a, b))), [a, b]),
        ("scale", lambda: ad.mean(ad.square(ad.scale(a, -1.7))), [a]),
        ("matmul", lambda: ad.mean(ad.square(ad.matmul(a, w))), [a, w]),
        ("tanh", lambda: ad.mean(ad.square(ad.tanh(a))), [a]),
        ("sigmoid", lambda: ad.mean(ad.square(ad.sigmoid(a))), [a]),
        ("pos", lambda: ad.mean(ad.square(ad.pos(a))), [a]),
        ("negpart", lambda: ad.mean(ad.square(ad.negpart(a))), [a]),
        ("square", lambda: ad.mean(ad.square(ad.square(a))), [a]),
        ("tsum", lambda: ad.mean(ad.square(ad.tsum(a, axis=1))), [a]),
        ("mean", lambda: ad.square(ad.mean(a)), [a]),
        ("concat", lambda: ad.mean(ad.square(ad.concat([a, b], axis=1))), [a, b]),
        ("slice_cols", lambda: ad.mean(ad.square(ad.slice_cols(a, 1, 3))), [a]),
        ("reshape", lambda: ad.mean(ad.square(ad.reshape(a, (4, 3)))), [a]),
        ("scalar-mul", lambda: ad.mean(ad.square(ad.mul(a, s))), [a, s]),
    ]
    out = [(name, fn, params, 1e-6, 1e-5) for name, fn, params in cases]

    net = nn.LstmStack(2, 5, seed=seed)
    x = gen.standard_normal((3, 2))

    def lstm_loss():
        h, carry = net.forward(0.25, x, net.zero_carry(3))
        h2, _ = net.forward(0.5, x + 0.1, carry)
        return ad.mean(ad.square(h2))

    out.append(("lstm-cell", lstm_loss, list(net.params.values()), 1e-5, 1e-5))

    dyn = mdl.gbm_dynamics(0.05, 0.2, np.array([0.8]))
    claim = mdl.basket_put_claim(1, 1.0, 0.03, 1.0, mdl.recovery_closeout(0.4))
    hz = mdl.constant_hazard(0.1)
    paths = simulate_euler(dyn, TimeGrid(4, 1.0), 2, seed=seed)
    rnet = nn.LstmStack(1, 11, seed=seed + 1)
    v = ad.param(0.2)
    rparams = list(rnet.params.values()) + [v]

    def rollout():
        return dbsde.rollout_loss(rnet, v, claim, dyn, hz, paths)

    out.append(("mini-rollout", rollout, rparams, 1e-4, 1e-4))
    return out


def cmd_gradcheck(args, extra) -> int:
    from cvarep import autodiff as ad

    seed = int(os.environ.get("XVA_SEED", args.seed))
    failed = 0
    for name, make_loss, params, eps, tol in _gradcheck_cases(seed):
        worst = ad.finite_difference_check(make_loss, params, eps=eps, seed=seed)
        ok = worst < tol
        failed += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name}: max relative error {worst:.3e} "
              f"(tolerance {tol:g})")
    return EXIT_OK if failed == 0 else EXIT_SOLVER


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvarep",
        description="Valuation of defaultable claims: CVA under risk-free and "
                    "replacement closeout conventions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--workers", type=int, default=1,
                       help="within-solver parallelism (1 = deterministic)")

    p = sub.add_parser("value", help="pre-default or risk-free value at (0, x0)")
    common(p)
    p.add_argument("--out", help="write a summary CSV (and PNG) here")
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("cva", help="credit valuation adjustment at (0, x0)")
    common(p)
    p.add_argument("--out", help="write a summary CSV (and PNG) here")
    p.set_defaults(func=cmd_cva)

    p = sub.add_parser("figure1", help="relative CVA error of the risk-free "
                                       "closeout over a hazard-rate sweep")
    common(p)
    p.add_argument("--lambda-min", type=float, default=0.01)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("table", help="per-dimension value/cva table")
    common(p)
    p.add_argument("--dims", required=True, help="comma list, e.g. 5,10")
    p.add_argument("--cva", action="store_true", help="tabulate CVA instead")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("validate-closeout",
                       help="Monte Carlo check of the closeout properties")
    common(p)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--y-range", type=float, default=5.0)
    p.set_defaults(func=cmd_validate_closeout)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except (ConfigError, ModelError, analytic.AnalyticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
