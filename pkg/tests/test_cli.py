"""Configuration handling, CLI commands, exit codes, and report output."""

import glob
import os

import numpy as np
import pytest

from cvarep import cli, config, report
from cvarep.analytic import put_value, replacement_value_nonneg

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def run_cli(args, capsys=None):
    code = cli.main(args)
    if capsys is None:
        return code, None
    return code, capsys.readouterr()


# ---------------------------------------------------------------- config ---

def test_every_example_config_parses_and_validates():
    paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.ini")))
    assert paths, "no example configs found"
    for path in paths:
        cfg = config.load_config(path)
        config.validate(cfg)


def test_unknown_key_is_rejected_by_name(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[solver]\nbogus = 1\n")
    with pytest.raises(config.ConfigError, match="solver.bogus"):
        config.load_config(path)


def test_unknown_section_is_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[extra]\nx = 1\n")
    with pytest.raises(config.ConfigError, match="extra"):
        config.load_config(path)


def test_unparseable_value_is_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nd = five\n")
    with pytest.raises(config.ConfigError, match="model.d"):
        config.load_config(path)


def test_cross_field_validation():
    cfg = config.apply_overrides(config.RunConfig(),
                                 [("solver.method", "pde"), ("model.d", "5")])
    with pytest.raises(config.ConfigError, match="pde"):
        config.validate(cfg)
    cfg = config.apply_overrides(config.RunConfig(),
                                 [("claim.R", "1.5")])
    with pytest.raises(config.ConfigError, match="claim.R"):
        config.validate(cfg)


def test_overrides_and_key_aliases():
    cfg = config.apply_overrides(config.RunConfig(), [
        ("claim.lambda", "0.25"),
        ("claim.lambdabar", "0.05"),
        ("solver.closeout-convention", "riskfree"),
    ])
    assert cfg.claim.lam == 0.25
    assert cfg.claim.lambar == 0.05
    assert cfg.solver.convention == "riskfree"
    with pytest.raises(config.ConfigError):
        config.apply_overrides(config.RunConfig(), [("nodot", "1")])


def test_dump_config_roundtrip(tmp_path):
    cfg = config.apply_overrides(config.RunConfig(), [
        ("model.d", "3"), ("claim.lambda", "0.7"), ("solver.method", "mc")])
    path = tmp_path / "dump.ini"
    path.write_text(config.dump_config(cfg))
    assert config.load_config(path) == cfg


# ------------------------------------------------------------------- cli ---

def test_value_analytic_matches_closed_form(capsys):
    code, cap = run_cli(["value", "--model.d", "1",
                         "--solver.method", "analytic"], capsys)
    assert code == 0
    cfg = config.apply_overrides(config.RunConfig(), [("model.d", "1")])
    p = config.const_params(cfg)
    expect = replacement_value_nonneg(p, put_value(p, 0.0, p.x0), 0.0)
    printed = float(cap.out.split("=")[1].split("+/-")[0])
    assert printed == pytest.approx(expect, abs=1e-15)


def test_value_out_writes_csv_and_png(tmp_path, capsys):
    out = tmp_path / "value.csv"
    code, _ = run_cli(["value", "--model.d", "1",
                       "--solver.method", "analytic", "--out", str(out)],
                      capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "dim,method,closeout,value,std,seconds"
    assert len(lines) == 2
    assert os.path.exists(report.png_path_for(out))


def test_cva_analytic(capsys):
    code, cap = run_cli(["cva", "--model.d", "1",
                         "--solver.method", "analytic"], capsys)
    assert code == 0
    cfg = config.apply_overrides(config.RunConfig(), [("model.d", "1")])
    p = config.const_params(cfg)
    U = put_value(p, 0.0, p.x0)
    expect = U - replacement_value_nonneg(p, U, 0.0)
    printed = float(cap.out.split("=")[1].split("+/-")[0])
    assert printed == pytest.approx(expect, abs=1e-15)


def test_exit_codes_for_bad_configuration(capsys):
    # pde in five dimensions: configuration error
    code, _ = run_cli(["value", "--solver.method", "pde", "--model.d", "5"],
                      capsys)
    assert code == 2
    # unknown key
    code, _ = run_cli(["value", "--solver.bogus", "1"], capsys)
    assert code == 2
    # mc cannot price the nonlinear closeout conventions
    code, _ = run_cli(["value", "--solver.method", "mc",
                       "--solver.closeout-convention", "replacement"], capsys)
    assert code == 2
    # flags must look like --section.key
    code, _ = run_cli(["value", "--bogus", "1"], capsys)
    assert code == 2


def test_mc_value_command(capsys):
    code, cap = run_cli(["value", "--model.d", "1", "--solver.method", "mc",
                         "--solver.closeout-convention", "none",
                         "--solver.L", "20000"], capsys)
    assert code == 0
    cfg = config.apply_overrides(config.RunConfig(), [("model.d", "1")])
    p = config.const_params(cfg)
    printed = float(cap.out.split("=")[1].split("+/-")[0])
    assert printed == pytest.approx(put_value(p, 0.0, p.x0), abs=0.01)


def test_xva_seed_env_overrides_seed(capsys, monkeypatch):
    args = ["value", "--model.d", "1", "--solver.method", "mc",
            "--solver.closeout-convention", "none", "--solver.L", "4000"]
    monkeypatch.setenv("XVA_SEED", "7")
    _, cap_env = run_cli(args, capsys)
    monkeypatch.delenv("XVA_SEED")
    _, cap_flag = run_cli(args + ["--solver.seed", "7"], capsys)
    _, cap_default = run_cli(args, capsys)
    strip = lambda s: s.out.split("(")[0]  # drop the timing suffix
    assert strip(cap_env) == strip(cap_flag)
    assert strip(cap_env) != strip(cap_default)


def test_figure1_csv_is_byte_stable(tmp_path, capsys):
    args = ["figure1", "--config", os.path.join(CONFIG_DIR, "figure1.ini"),
            "--solver.J", "120", "--solver.Np", "120",
            "--lambda-min", "0.05", "--lambda-max", "0.6", "--steps", "4"]
    out1 = tmp_path / "fig-a.csv"
    out2 = tmp_path / "fig-b.csv"
    assert run_cli(args + ["--out", str(out1)], capsys)[0] == 0
    assert run_cli(args + ["--out", str(out2)], capsys)[0] == 0
    b1, b2 = out1.read_bytes(), out2.read_bytes()
    assert b1 == b2
    lines = b1.decode().splitlines()
    assert lines[0] == "lambda,relative_error_analytic,relative_error_pde"
    assert len(lines) == 5
    assert os.path.exists(report.png_path_for(out1))


def test_validate_closeout_command(capsys):
    code, cap = run_cli(["validate-closeout", "--n-samples", "200"], capsys)
    assert code == 0
    assert "no violations" in cap.out


def test_gradcheck_primitives_only_smoke(capsys):
    # the full gradcheck (LSTM + rollout) runs in the acceptance suite
    cases = cli._gradcheck_cases(seed=0)
    assert len(cases) == 19
    names = [c[0] for c in cases]
    assert "lstm-cell" in names and "mini-rollout" in names


def test_workers_flag_validation(capsys):
    code, _ = run_cli(["value", "--model.d", "1",
                       "--solver.method", "analytic", "--workers", "0"],
                      capsys)
    assert code == 2


# ---------------------------------------------------------------- report ---

def test_write_csv_formats(tmp_path):
    path = tmp_path / "cells.csv"
    report.write_csv(path, ["a", "b", "c", "d"],
                     [(1, 0.5, True, "text"), (np.int64(2), np.float64(0.1),
                                               False, "x")])
    assert path.read_text() == ("a,b,c,d\n"
                                "1,0.5,true,text\n"
                                "2,0.1,false,x\n")


def test_format_float_roundtrips():
    for v in (0.1, 1 / 3, 1e-17, 123456.789, float(np.float64(2) ** -30)):
        assert float(report.format_float(v)) == v


def test_png_path_for():
    assert report.png_path_for("a/b/run.csv") == "a/b/run.png"
