import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import GOLDEN
from qpkdv.driver_cli import (Config, LambdaResult, RunReport, Schedule, config_from_dict, emit,
                              initial_solution, load_config, main, run, solve_lambda, verify_solution)
from qpkdv.errors import ConfigError
from qpkdv.kam_reduce import DiagonalModel, apply_J

REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "reference.toml"
LAM_RES = 1 / (2 * GOLDEN[1] - 2)        # first resonance at k = -1, ell = (-2, 2)

SMALL_TOML = """
[problem]
v = 2
Kphi = 4
Kx = 8
eps = 1e-4
lambdas = [1.05]

[schedule]
alpha0 = 0.005
q = 0

[run]
max_steps = 4
"""


def small_config(**kw):
    base = dict(Kphi=4, Kx=8, q=0, lambdas=[1.05])
    base.update(kw)
    return Config(**base)


def write_config(tmp_path, text=SMALL_TOML):
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# schedule and configuration


def test_schedule_sequences():
    sch = Schedule(1e-4, 5e-3)
    assert sch.eps_m(1) == 1e-4 and sch.eps_m(2) == pytest.approx(1e-4 ** (4 / 3))
    assert sch.s_n(1) == 0.1 and sch.s_n(3) == pytest.approx(0.1 * (10 / 11) ** 2)
    assert sch.s_prime(1) == pytest.approx(0.1 * 99 / 101) and sch.sigma(1) == pytest.approx(5e-4)
    assert sch.alpha(1, 1) == pytest.approx(5e-3)
    assert sch.C_d(1) == pytest.approx(0.625) and sch.C_lambda(1) == pytest.approx(1.5e-4)
    assert sch.p == 11 and sch.eta == pytest.approx(22.2) and sch.q_default == pytest.approx(42.2)


@pytest.mark.parametrize("eps,alpha0,s", [(1e-2, 5e-3, 0.1), (1e-4, 0.02, 0.1), (1e-4, 5e-3, 0.004)])
def test_schedule_rejects_bad_ordering(eps, alpha0, s):
    with pytest.raises(ConfigError):
        Schedule(eps, alpha0, s)
    Schedule(eps, alpha0, s, strict=False)


def test_config_defaults_and_validation():
    cfg = Config()
    assert np.allclose(cfg.omega_bar, GOLDEN) and cfg.tau == 4.0 and cfg.s0 == 3
    for bad in (dict(lambdas=[0.4]), dict(tau=3.0), dict(omega_bar=(1.0,)), dict(max_steps=0), dict(eps=-1)):
        with pytest.raises(ConfigError):
            Config(**bad)


def test_config_from_dict():
    cfg = config_from_dict({"problem": {"lambda_grid": {"start": 0.9, "stop": 1.1, "n": 5}},
                            "sieve": {"grid": 200, "L": 3}})
    assert np.allclose(cfg.lambdas, np.linspace(0.9, 1.1, 5))
    assert cfg.sieve_grid == 200 and cfg.sieve_L == 3
    with pytest.raises(ConfigError):
        config_from_dict({"nonsense": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"problem": {"colour": 1}})


def test_load_reference_and_malformed(tmp_path):
    cfg = load_config(REFERENCE)
    assert (cfg.v, cfg.Kphi, cfg.Kx, cfg.q) == (2, 8, 16, 0) and cfg.lambdas == [1.05]
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, "[problem\nv = 2"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


# ---------------------------------------------------------------------------
# the iteration


def test_initial_solution_inverts_constant_part():
    prob = small_config().problem()
    u = initial_solution(prob)
    D = DiagonalModel.unperturbed(1.0, 2, 4, 8)
    back = apply_J(D, u, prob.omega)
    assert np.max(np.abs((back - prob.forcing).coeffs)) < 1e-18
    assert u.reality_defect() == 0.0


def test_zero_forcing_gives_zero_solution():
    res = solve_lambda(small_config(eps=0.0), 1.05)
    assert res.converged and res.u.l2() == 0.0 and res.steps == []


def test_small_problem_converges():
    cfg = small_config()
    res = solve_lambda(cfg, 1.05)
    assert res.converged and res.residuals[-1] <= cfg.tol
    assert res.residuals == sorted(res.residuals, reverse=True)
    assert verify_solution(res.u, cfg.problem(1.05)) <= 1e-14


def test_resonant_lambda_is_excluded():
    res = solve_lambda(small_config(), LAM_RES)
    assert res.status == "excluded"
    assert res.record["kind"] == "first" and tuple(res.record["ell"]) in {(-2, 2), (2, -2)}


def test_report_exit_codes():
    def rep(*statuses):
        return RunReport({}, [LambdaResult(1.0, s, 0.0, []) for s in statuses], 0.0)
    assert rep("converged").exit_code == 0
    assert rep("converged", "excluded").exit_code == 2
    assert rep("excluded", "max_steps").exit_code == 1
    assert rep("failed").exit_code == 1


def test_run_orders_results_across_workers():
    cfg = small_config(eps=0.0, lambdas=[1.2, 0.8, 1.0], workers=2)
    rep = run(cfg)
    assert [r.lam for r in rep.results] == [0.8, 1.0, 1.2]
    assert rep.exit_code == 0


def test_emit_manifest_hashes(tmp_path):
    rep = run(small_config())
    out = emit(rep, tmp_path / "r")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and "report.json" in manifest["files"]
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    data = json.loads((out / "report.json").read_text())
    assert data["results"][0]["status"] == "converged"


# ---------------------------------------------------------------------------
# command line


def test_cli_solve_converges(tmp_path):
    r = CliRunner().invoke(main, ["solve", "--config", write_config(tmp_path), "--out", str(tmp_path / "o")])
    assert r.exit_code == 0, r.output
    assert "converged" in r.output
    assert len(list((tmp_path / "o").glob("solve-*/manifest.json"))) == 1


def test_cli_solve_excluded_exit_code(tmp_path):
    r = CliRunner().invoke(main, ["solve", "--config", write_config(tmp_path), "--lambda", repr(float(LAM_RES)),
                                  "--out", str(tmp_path / "o"), "--report", "csv"])
    assert r.exit_code == 2 and "excluded" in r.output and "wrote" in r.output


def test_cli_malformed_config_exit_code(tmp_path):
    r = CliRunner().invoke(main, ["solve", "--config", write_config(tmp_path, "[problem]\nv = 'two'\nKphi = [")])
    assert r.exit_code == 1 and "config error" in r.output
    r = CliRunner().invoke(main, ["sieve", "--config", write_config(tmp_path, "[run]\nspeed = 3\n")])
    assert r.exit_code == 1


def test_cli_sieve(tmp_path):
    r = CliRunner().invoke(main, ["sieve", "--config", write_config(tmp_path), "--grid", "500",
                                  "--out", str(tmp_path / "o")])
    assert r.exit_code == 0, r.output
    assert "excluded fraction" in r.output
    (run_dir,) = list((tmp_path / "o").glob("sieve-*"))
    summary = json.loads((run_dir / "sieve.json").read_text())
    assert summary["grid_points"] == 500 and math.isfinite(summary["excluded_fraction"])


def test_cli_check_suite():
    r = CliRunner().invoke(main, ["check", "--suite", "all", "--seed", "3"])
    assert r.exit_code == 0, r.output
    assert r.output.count("PASS") == 5 and "FAIL" not in r.output
