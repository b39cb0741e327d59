"""Outer Newton iteration, run orchestration, configuration and the command line.

Each outer step n regularizes L(u_n), runs n reduction steps, applies the
approximate inverse to F(u_n) and updates u_{n+1} = u_n - v.  Configuration
files use TOML; see ``Config`` for the recognized keys.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, KdvError, NumericalError, ParameterExcluded
from .kam_reduce import DiagonalModel, ReductionState, approx_inverse, invert_J, reduce
from .linearized import KdVProblem, build_L, forcing_from_modes, residual_F
from .regularize import assemble
from .sieve import alpha_schedule, diophantine_check, golden_frequency, measure_estimate
from .spectral_core import PI_HIGH, PI_LOW, FourierField, NormParams, norm_sp

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "Schedule",
    "Config",
    "load_config",
    "StepRecord",
    "LambdaResult",
    "RunReport",
    "DivergenceError",
    "initial_solution",
    "newton_step",
    "solve_lambda",
    "verify_solution",
    "run",
    "emit",
    "main",
]

log = logging.getLogger(__name__)

OUT_ENV = "QPKDV_OUT"


class DivergenceError(NumericalError):
    """The residual grew during an outer step."""


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class Schedule:
    """Sizes, widths and non-resonance constants along the iteration."""

    eps: float
    alpha0: float
    s: float = 0.1
    s0: int = 3
    tau: float = 4.0
    tau0: float = 1.2
    c_mu: float = 1.0
    strict: bool = True

    def __post_init__(self):
        for name in ("eps", "alpha0", "s", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.strict and not (self.eps < self.alpha0 < min(0.01, self.s)):
            raise ConfigError(
                f"need eps < alpha0 < min(1/100, s); got eps={self.eps}, alpha0={self.alpha0}, s={self.s}")

    def eps_m(self, m: int) -> float:
        return self.eps ** ((4.0 / 3.0) ** (m - 1))

    def s_n(self, n: int) -> float:
        return (10.0 / 11.0) ** (n - 1) * self.s

    def s_prime(self, n: int) -> float:
        return 99.0 / 101.0 * self.s_n(n)

    def sigma(self, m: int) -> float:
        return self.s_n(m) / 200.0

    def alpha(self, m: int, n: int) -> float:
        return alpha_schedule(self.alpha0, m, n)

    def C_d(self, m: int) -> float:
        return (1 + 2.0 ** (-(m + 1))) / 2

    def C_lambda(self, m: int) -> float:
        return (2 - 2.0 ** (-m)) * self.eps

    def C_mu(self, m: int) -> float:
        return self.c_mu * (2 - 2.0 ** (-m)) * self.eps

    @property
    def p(self) -> float:
        return 2 * self.s0 + 5

    @property
    def eta(self) -> float:
        return 4 * self.s0 + self.tau0 + 9

    @property
    def q_default(self) -> float:
        return self.p + self.eta + 2 * self.tau + 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class Config:
    v: int = 2
    Kphi: int = 8
    Kx: int = 16
    omega_bar: tuple | None = None
    eps: float = 1e-4
    forcing: list = field(default_factory=lambda: [[[1, 0], 1, 1.0], [[0, 1], 2, 0.5]])
    lambdas: list = field(default_factory=lambda: [1.05])
    alpha0: float = 0.005
    tau: float | None = None
    tau0: float = 1.2
    s0: int | None = None
    s: float = 0.1
    q: float | None = None
    max_steps: int = 6
    tol: float = 1e-10
    norm_s: float = 0.0
    norm_p: float = 0.0
    workers: int = 1
    out_dir: str = "runs"
    sieve_grid: int = 10000
    sieve_L: int | None = None
    sieve_steps: int = 1

    def __post_init__(self):
        if self.v < 1 or self.Kphi < 1 or self.Kx < 1:
            raise ConfigError("v, Kphi and Kx must be positive")
        if self.omega_bar is None:
            self.omega_bar = tuple(golden_frequency(self.v).tolist())
        self.omega_bar = tuple(float(w) for w in self.omega_bar)
        if len(self.omega_bar) != self.v:
            raise ConfigError("omega_bar needs v entries")
        if self.tau is None:
            self.tau = float(self.v + 2)
        if self.tau <= self.v + 1:
            raise ConfigError("tau must exceed v + 1")
        if self.s0 is None:
            self.s0 = math.ceil((self.v + 1) / 2) + 1
        if self.eps < 0:
            raise ConfigError("eps must be nonnegative")
        for lam in self.lambdas:
            if not PI_LOW <= lam <= PI_HIGH:
                raise ConfigError(f"lambda={lam} outside [{PI_LOW}, {PI_HIGH}]")
        if self.max_steps < 1 or self.tol <= 0 or self.workers < 1:
            raise ConfigError("max_steps, tol and workers must be positive")

    @property
    def schedule(self) -> Schedule:
        return Schedule(max(self.eps, 1e-300), self.alpha0, self.s, self.s0, self.tau, self.tau0,
                        strict=self.eps > 0)

    @property
    def norm(self) -> NormParams:
        return NormParams(self.norm_s, self.norm_p)

    @property
    def q_value(self) -> float:
        return self.schedule.q_default if self.q is None else self.q

    def problem(self, lam: float | None = None) -> KdVProblem:
        triples = []
        for entry in self.forcing:
            try:
                ell, k, amp = entry
            except (TypeError, ValueError):
                raise ConfigError(f"forcing entry {entry!r} is not [ell, k, amplitude]") from None
            if isinstance(amp, (list, tuple)):
                amp = complex(amp[0], amp[1])
            triples.append((tuple(ell), int(k), amp))
        if self.eps == 0 or not triples:
            f = FourierField.zeros(self.v, self.Kphi, self.Kx)
        else:
            f = forcing_from_modes(triples, self.v, self.Kphi, self.Kx, eps=self.eps,
                                   norm=NormParams(self.s, self.q_value))
        return KdVProblem(f, self.omega_bar, self.lambdas[0] if lam is None else lam, eps=self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "problem": ("v", "Kphi", "Kx", "omega_bar", "eps", "forcing", "lambdas", "lambda_grid"),
    "schedule": ("alpha0", "tau", "tau0", "s0", "s", "q"),
    "run": ("max_steps", "tol", "norm_s", "norm_p", "workers", "out_dir"),
    "sieve": ("grid", "L", "steps"),
}


def config_from_dict(d: dict) -> Config:
    """Flatten the TOML sections into Config keyword arguments."""
    kw = {}
    for sec, body in d.items():
        if sec not in _SECTIONS or not isinstance(body, dict):
            raise ConfigError(f"unknown section [{sec}]")
        for key, val in body.items():
            if key not in _SECTIONS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            if sec == "sieve":
                kw[f"sieve_{key}"] = val
            elif key == "lambda_grid":
                kw["lambdas"] = np.linspace(val["start"], val["stop"], int(val["n"])).tolist()
            else:
                kw[key] = val
    try:
        return Config(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> Config:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# the iteration


@dataclass
class StepRecord:
    n: int
    residual: float
    correction: float
    remainders: list
    linear_defect: float
    quadratic: float
    seconds: float
    eps_n: float
    h1_ok: bool


@dataclass
class LambdaResult:
    lam: float
    status: str
    residual0: float
    steps: list
    message: str = ""
    u: FourierField | None = None
    record: dict | None = None

    @property
    def residuals(self) -> list:
        return [self.residual0] + [s.residual for s in self.steps]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "status": self.status, "message": self.message,
                "residuals": self.residuals, "steps": [asdict(s) for s in self.steps],
                "record": self.record}


def initial_solution(prob: KdVProblem, alpha: float = 0.0, tau: float = 0.0) -> FourierField:
    """u_1 solving omega.d u + d_x^5 u = d_x f by division."""
    f = prob.forcing
    D = DiagonalModel.unperturbed(1.0, f.v, f.Kphi, f.Kx)
    return invert_J(D, f, alpha, tau, prob.omega).real_part()


def newton_step(u: FourierField, prob: KdVProblem, schedule: Schedule, n: int,
                norm: NormParams = NormParams(0.0, 0.0)):
    """One outer step; returns (u_next, StepRecord)."""
    t0 = time.perf_counter()
    F = residual_F(u, prob)
    omega = prob.omega
    reg = assemble(u, omega, alpha0=schedule.alpha0, tau0=schedule.tau0)
    st = ReductionState.from_regularized(reg, outer=n, norm=NormParams(0.0, 0.0),
                                         width=schedule.s_prime(n))
    st = reduce(st, n, schedule)
    v = approx_inverse(reg, st, F, schedule.alpha(n, n), schedule.tau).real_part()
    u_next = u - v
    F_next = residual_F(u_next, prob)
    Lv = build_L(u, omega)(v)
    lin = norm_sp(Lv - F, norm)
    quad = norm_sp(F_next - (F - Lv), norm)
    corr = norm_sp(v, norm)
    rec = StepRecord(n, norm_sp(F_next, norm), corr,
                     [h["remainder_after"] for h in st.history], lin, quad,
                     time.perf_counter() - t0, schedule.eps_m(n), corr <= schedule.eps_m(n))
    return u_next, rec


def verify_solution(u: FourierField, prob: KdVProblem, norm: NormParams = NormParams(0.0, 0.0)) -> float:
    """Residual with the truncation doubled in both phi and x."""
    big = prob.resized(2 * u.Kphi, 2 * u.Kx)
    return norm_sp(residual_F(u.resize(2 * u.Kphi, 2 * u.Kx), big), norm)


def solve_lambda(cfg: Config, lam: float) -> LambdaResult:
    sch = cfg.schedule
    prob = cfg.problem(lam)
    norm = cfg.norm
    zero = FourierField.zeros(cfg.v, cfg.Kphi, cfg.Kx)
    r0 = norm_sp(residual_F(zero, prob), norm)
    res = LambdaResult(lam, "running", r0, [])
    try:
        if r0 <= cfg.tol:
            res.status, res.u = "converged", zero
            return res
        u = initial_solution(prob, sch.alpha(1, 1), sch.tau)
        res.steps.append(StepRecord(0, norm_sp(residual_F(u, prob), norm), norm_sp(u, norm), [],
                                    0.0, 0.0, 0.0, sch.eps_m(1), norm_sp(u, norm) <= 2 * cfg.eps))
        current = res.steps[-1].residual
        for n in range(1, cfg.max_steps + 1):
            if current <= cfg.tol:
                break
            u, rec = newton_step(u, prob, sch, n, norm)
            res.steps.append(rec)
            if rec.residual > current:
                raise DivergenceError(f"residual grew from {current:.3e} to {rec.residual:.3e}")
            current = rec.residual
        res.u = u
        res.status = "converged" if current <= cfg.tol else "max_steps"
    except ParameterExcluded as e:
        res.status, res.message, res.record = "excluded", str(e), _jsonable(e.record)
    except KdvError as e:
        res.status, res.message = "failed", f"{type(e).__name__}: {e}"
    return res


def _jsonable(rec):
    if rec is None:
        return None
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in rec.items()}


@dataclass
class RunReport:
    config: dict
    results: list
    seconds: float

    @property
    def exit_code(self) -> int:
        st = [r.status for r in self.results]
        if any(s in ("failed", "max_steps") for s in st):
            return 1
        if any(s == "excluded" for s in st):
            return 2
        return 0

    def to_dict(self) -> dict:
        return {"config": self.config, "seconds": self.seconds, "exit_code": self.exit_code,
                "results": [r.to_dict() for r in self.results]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["lambda", "status", "n", "residual", "correction", "remainder", "seconds"])
        for r in self.results:
            w.writerow([f"{r.lam:.12g}", r.status, "start", f"{r.residual0:.6e}", "", "", ""])
            for s in r.steps:
                rem = f"{s.remainders[-1]:.6e}" if s.remainders else ""
                w.writerow([f"{r.lam:.12g}", r.status, s.n, f"{s.residual:.6e}",
                            f"{s.correction:.6e}", rem, f"{s.seconds:.3f}"])
        return buf.getvalue()


def _solve_star(args):
    return solve_lambda(*args)


def run(cfg: Config, lambdas=None) -> RunReport:
    """Solve for every lambda; results are ordered by lambda whatever the worker count."""
    lams = sorted(cfg.lambdas if lambdas is None else lambdas)
    t0 = time.perf_counter()
    if cfg.workers > 1 and len(lams) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_solve_star, [(cfg, lam) for lam in lams]))
    else:
        results = [solve_lambda(cfg, lam) for lam in lams]
    return RunReport(cfg.to_dict(), results, time.perf_counter() - t0)


def _write(path: Path, text: str, files: dict):
    path.write_text(text)
    files[path.name] = hashlib.sha256(text.encode()).hexdigest()


def emit(report: RunReport, out_dir, fmt: str = "json", name: str = "solve") -> Path:
    """Write the report, the convergence table, solutions and a manifest into a run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if fmt in ("json", "both"):
        _write(out / "report.json", json.dumps(report.to_dict(), indent=2), files)
    if fmt in ("csv", "both", "json"):
        _write(out / "convergence.csv", report.to_csv(), files)
    for r in report.results:
        if r.u is not None:
            _write(out / f"u_lambda_{r.lam:.8f}.json", r.u.to_json(), files)
    manifest = {"command": name, "exit_code": report.exit_code, "files": files,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def _run_dir(base: str | None, cfg_out: str, name: str) -> Path:
    root = base or os.environ.get(OUT_ENV) or cfg_out
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = Path(root) / f"{name}-{stamp}"
    i = 1
    while path.exists():
        path = Path(root) / f"{name}-{stamp}-{i}"
        i += 1
    return path


# ---------------------------------------------------------------------------
# command line


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging.")
def main(verbose):
    """Quasi-periodic solutions of the forced fifth-order KdV equation."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--lambda", "lam", type=float, default=None, help="Solve for this lambda only.")
@click.option("--out", "out", type=click.Path(), default=None, help="Base output directory.")
@click.option("--report", "fmt", type=click.Choice(["json", "csv"]), default="json")
def solve(config_path, lam, out, fmt):
    """Run the Newton iteration for the configured lambdas."""
    try:
        cfg = load_config(config_path)
        if lam is not None:
            cfg.lambdas = [lam]
            cfg.__post_init__()
        dio = diophantine_check(cfg.omega_bar, 0.0, cfg.tau0, 50)
        log.info("omega_bar Diophantine constant %.3e at ell=%s", dio.alpha_max, dio.worst_ell)
        report = run(cfg)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(1)
    path = emit(report, _run_dir(out, cfg.out_dir, "solve"), fmt)
    for r in report.results:
        click.echo(f"lambda={r.lam:.6f} {r.status:10s} residuals=" +
                   " ".join(f"{x:.2e}" for x in r.residuals) + (f"  {r.message}" if r.message else ""))
    click.echo(f"wrote {path}")
    sys.exit(report.exit_code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--grid", "grid", type=int, default=None, help="Number of lambda grid points.")
@click.option("--out", "out", type=click.Path(), default=None)
def sieve(config_path, grid, out):
    """Estimate the excluded parameter measure on a uniform lambda grid."""
    try:
        cfg = load_config(config_path)
        n = grid or cfg.sieve_grid
        if n < 2:
            raise ConfigError("the grid needs at least two points")
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(1)
    lams = np.linspace(PI_LOW, PI_HIGH, n)
    rep = measure_estimate(cfg.omega_bar, lams, cfg.alpha0, cfg.tau, cfg.sieve_L or cfg.Kphi,
                           Kx=cfg.Kx, n_steps=cfg.sieve_steps)
    path = _run_dir(out, cfg.out_dir, "sieve")
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    _write(path / "sieve.csv", rep.to_csv(), files)
    _write(path / "sieve.json", rep.to_json(), files)
    (path / "manifest.json").write_text(json.dumps({"command": "sieve", "files": files}, indent=2))
    click.echo(f"excluded fraction {rep.fraction:.4e} ({rep.fraction / cfg.alpha0:.2f} x alpha0), "
               f"{len(rep.intervals)} intervals, max width ratio {rep.max_width_ratio:.3f}")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--suite", type=click.Choice(["norms", "composition", "reduction", "all"]), default="all")
@click.option("--seed", type=int, default=0)
def check(suite, seed):
    """Run the built-in property checks."""
    from .checks import run_suite
    results = run_suite(suite, seed)
    ok = True
    for name, passed, detail in results:
        ok &= passed
        click.echo(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":  # pragma: no cover
    main()
