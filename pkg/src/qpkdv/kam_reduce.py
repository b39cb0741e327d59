"""Reducibility of omega.d_theta + D + R toward a diagonal operator.

The diagonal part is D = diag i(d_k + mu_k(theta)) with real constants d_k and
zero-mean real torus functions mu_k.  Each step solves the homological equation

    omega.d_theta Phi + [D, Phi] + R = diag R

blockwise with dense Kuksin solves, conjugates by e^Phi and moves the diagonal
of R into D.  Space modes exclude k = 0 throughout.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .decay_ops import VarCoeffOperator, decay_norm, op_apply, op_exp, space_modes
from .errors import ConfigError, NumericalError, ParameterExcluded, SmallDivisorError
from .spectral_core import FourierField, NormParams, product_grid, torus_modes

__all__ = [
    "DiagonalModel",
    "ReductionState",
    "kuksin_matrix",
    "kuksin_solve",
    "kuksin_solve_batch",
    "homological_solve",
    "homological_residual",
    "reduce_step",
    "reduce",
    "commutator_series_remainder",
    "apply_J",
    "invert_J",
    "approx_inverse",
    "COND_MAX",
    "RESIDUAL_TOL",
]

log = logging.getLogger(__name__)

COND_MAX = 1e12
RESIDUAL_TOL = 1e-10
_CHUNK = 48


# ---------------------------------------------------------------------------
# the diagonal model


@dataclass(frozen=True, eq=False)
class DiagonalModel:
    """d_k (real, shape (N,)) and mu_k(theta) (torus series, shape (n_ell, N))."""

    d: np.ndarray
    mu: np.ndarray
    m: float
    v: int
    Kphi: int
    Kx: int
    separation: float | None = 0.5

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        N = len(space_modes(self.Kx))
        n = torus_modes(self.v, self.Kphi).n
        mu = np.zeros((n, N), dtype=complex) if self.mu is None else np.array(self.mu, dtype=complex)
        if d.shape != (N,) or mu.shape != (n, N):
            raise ConfigError("diagonal model has the wrong shape")
        if np.any(np.abs(mu[torus_modes(self.v, self.Kphi).zero]) > 1e-13):
            raise ConfigError("mu_k must have zero torus average")
        if N and np.any(np.diff(d) <= 0):
            raise ConfigError("d_k must be strictly increasing in k")
        if self.separation is not None and N > 1:
            k = self.kidx.astype(float)
            gap = np.abs(d[:, None] - d[None, :])
            need = self.separation * np.abs(k[:, None] ** 5 - k[None, :] ** 5)
            if np.any(gap < need - 1e-9 * need):
                raise ConfigError("d_k violate the separation bound")
        d.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def unperturbed(cls, m, v, Kphi, Kx, **kw):
        k = space_modes(Kx).astype(float)
        return cls(m * k ** 5, None, m, v, Kphi, Kx, **kw)

    @property
    def kidx(self) -> np.ndarray:
        return space_modes(self.Kx)

    @property
    def modes(self):
        return torus_modes(self.v, self.Kphi)

    def r(self) -> np.ndarray:
        """r_k with d_k = m k^5 + r_k k^3."""
        k = self.kidx.astype(float)
        return (self.d - self.m * k ** 5) / k ** 3

    def mu_ratio(self) -> float:
        """max_k sum_ell |mu_k,ell| / |k|^3."""
        k = np.abs(self.kidx).astype(float)
        return float(np.max(np.abs(self.mu).sum(axis=0) / k ** 3, initial=0.0))

    def operator(self) -> VarCoeffOperator:
        """D = diag i(d_k + mu_k) as an operator."""
        vals = 1j * self.mu
        vals[self.modes.zero] += 1j * self.d
        return VarCoeffOperator.diagonal(vals, self.v, self.Kphi, self.Kx, hamiltonian=True)

    def to_json_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "Kphi": self.Kphi, "Kx": self.Kx,
                "d": self.d.tolist(), "mu_re": self.mu.real.tolist(), "mu_im": self.mu.imag.tolist()}

    @classmethod
    def from_json_dict(cls, dd: dict) -> "DiagonalModel":
        mu = np.asarray(dd["mu_re"]) + 1j * np.asarray(dd["mu_im"])
        return cls(np.asarray(dd["d"]), mu, dd["m"], dd["v"], dd["Kphi"], dd["Kx"], separation=None)


# ---------------------------------------------------------------------------
# Kuksin solves


def kuksin_matrix(d: float, mu: np.ndarray, omega, v: int, K: int) -> np.ndarray:
    """Dense matrix of -i omega.d_theta + d + mu(theta) on the torus modes."""
    tm = torus_modes(v, K)
    di = tm.diff_index()
    mu = np.asarray(mu, dtype=complex)
    A = np.where(di >= 0, mu[np.maximum(di, 0)], 0.0)
    A[np.diag_indices(tm.n)] += tm.dot(omega) + d
    return A


def _floor_check(div, floor, ells, what):
    bad = np.abs(div) < floor
    if np.any(bad):
        a = int(np.argmin(np.where(bad, np.abs(div) / floor, np.inf)))
        raise SmallDivisorError(
            f"{what}: |omega.ell + d| = {abs(div[a]):.3e} below {floor[a]:.3e} at ell={tuple(ells[a])}",
            ell=ells[a], value=float(div[a]), floor=float(floor[a]))


def _cond_bound(diag: np.ndarray, mu_l1: np.ndarray) -> np.ndarray:
    """Neumann-series bound on the 1-norm condition number; inf where it does not apply."""
    lo = np.min(np.abs(diag), axis=-1) - mu_l1
    hi = np.max(np.abs(diag), axis=-1) + mu_l1
    with np.errstate(divide="ignore"):
        return np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)


def kuksin_solve(d: float, mu, rhs, omega, v: int, K: int, floor=None) -> np.ndarray:
    """Solve -i omega.d_theta u + d u + mu(theta) u = rhs for torus series.

    ``mu`` and ``rhs`` are coefficient vectors over the torus modes; ``floor``
    (scalar or per-mode array) is the admissible lower bound for |omega.ell + d|.
    """
    tm = torus_modes(v, K)
    mu = np.zeros(tm.n) if mu is None else np.asarray(mu, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    if abs(mu[tm.zero]) > 1e-13:
        raise ConfigError("mu must have zero torus average")
    div = tm.dot(omega) + d
    if floor is not None:
        _floor_check(div, np.broadcast_to(floor, div.shape), tm.ells, "Kuksin solve")
    if not np.any(rhs):
        return np.zeros(tm.n, dtype=complex)
    if not np.any(mu):
        if np.any(div == 0):
            raise SmallDivisorError("zero divisor", ell=tm.ells[int(np.argmin(np.abs(div)))], value=0.0)
        return rhs / div
    A = kuksin_matrix(d, mu, omega, v, K)
    cond = _cond_bound(div, np.abs(mu).sum())
    if not np.isfinite(cond):
        cond = np.linalg.cond(A)
    if cond > COND_MAX:
        raise NumericalError(f"Kuksin matrix is ill-conditioned (cond ~ {cond:.2e})")
    u = np.linalg.solve(A, rhs)
    res = np.linalg.norm(A @ u - rhs)
    if res > RESIDUAL_TOL * max(np.linalg.norm(rhs), 1e-300):
        raise NumericalError(f"Kuksin solve residual {res:.2e} too large")
    return u


def kuksin_solve_batch(d: np.ndarray, mu: np.ndarray, rhs: np.ndarray, omega, v: int, K: int,
                       floor: np.ndarray | None = None, labels=None) -> np.ndarray:
    """Many Kuksin solves at once: d (P,), mu (P, n), rhs (P, n) -> (P, n).

    ``floor`` has shape (P, n) when given.  On a floor violation the raised
    SmallDivisorError carries ``label`` = labels[p] of the offending problem.
    """
    tm = torus_modes(v, K)
    d = np.asarray(d, dtype=float)
    mu = np.asarray(mu, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    P = len(d)
    div = tm.dot(omega)[None, :] + d[:, None]
    if floor is not None:
        bad = np.abs(div) < floor
        if np.any(bad):
            p, a = np.argwhere(bad)[np.argmin((np.abs(div) / floor)[bad])]
            err = SmallDivisorError(
                f"|omega.ell + d| = {abs(div[p, a]):.3e} below {floor[p, a]:.3e} at ell={tuple(tm.ells[a])}",
                ell=tm.ells[a], value=float(div[p, a]), floor=float(floor[p, a]))
            err.label = None if labels is None else labels[p]
            raise err
    out = np.zeros((P, tm.n), dtype=complex)
    plain = ~np.any(mu, axis=1)
    if np.any(plain):
        out[plain] = rhs[plain] / div[plain]
    todo = np.nonzero(~plain & np.any(rhs, axis=1))[0]
    if len(todo) == 0:
        return out
    di = tm.diff_index()
    gather = np.maximum(di, 0)
    inside = di >= 0
    cond = _cond_bound(div[todo], np.abs(mu[todo]).sum(axis=1))
    for start in range(0, len(todo), _CHUNK):
        idx = todo[start:start + _CHUNK]
        A = np.where(inside[None], mu[idx][:, gather], 0.0)
        A[:, np.arange(tm.n), np.arange(tm.n)] += div[idx]
        c = cond[start:start + _CHUNK]
        loose = ~np.isfinite(c)
        if np.any(loose):
            c = c.copy()
            c[loose] = np.linalg.cond(A[loose])
        if np.any(c > COND_MAX):
            raise NumericalError(f"Kuksin matrix is ill-conditioned (cond ~ {np.max(c):.2e})")
        x = np.linalg.solve(A, rhs[idx][..., None])[..., 0]
        res = np.linalg.norm(np.einsum("pab,pb->pa", A, x) - rhs[idx], axis=1)
        scale = np.maximum(np.linalg.norm(rhs[idx], axis=1), 1e-300)
        if np.any(res > RESIDUAL_TOL * scale):
            raise NumericalError(f"Kuksin solve residual {np.max(res / scale):.2e} too large")
        out[idx] = x
    return out


# ---------------------------------------------------------------------------
# homological equation


def _melnikov_floor(alpha, tau, weight, tm):
    """alpha * weight / [ell]^tau with weight per problem, shape (P, n)."""
    return alpha * np.asarray(weight, dtype=float)[:, None] / tm.bracket.astype(float)[None, :] ** tau


def homological_solve(D: DiagonalModel, R: VarCoeffOperator, alpha: float, tau: float,
                      omega) -> VarCoeffOperator:
    """Phi with Phi_ii = 0 and -i omega.d Phi_ij + (d_i - d_j + mu_i - mu_j) Phi_ij = i R_ij."""
    if (R.v, R.Kphi, R.Kx, R.include_zero) != (D.v, D.Kphi, D.Kx, False):
        raise ConfigError("remainder and diagonal model have different truncations")
    tm = R.modes
    N = R.N
    I, J = np.nonzero(~np.eye(N, dtype=bool))
    k = D.kidx.astype(float)
    floor = _melnikov_floor(alpha, tau, np.abs(k[I] ** 5 - k[J] ** 5), tm) if alpha else None
    labels = list(zip(D.kidx[I].tolist(), D.kidx[J].tolist()))
    try:
        sol = kuksin_solve_batch(D.d[I] - D.d[J], (D.mu[:, I] - D.mu[:, J]).T,
                                 1j * R.blocks[:, I, J].T, omega, R.v, R.Kphi, floor, labels)
    except SmallDivisorError as e:
        i, j = getattr(e, "label", (None, None))
        raise ParameterExcluded(
            f"second Melnikov condition fails for (i, j) = ({i}, {j}) at ell = {e.ell}",
            {"kind": "second", "i": i, "j": j, "ell": e.ell, "value": e.value, "floor": e.floor}) from e
    b = np.zeros_like(R.blocks)
    b[:, I, J] = sol.T
    return R.like(b, hamiltonian=False)


def _diag_commutator_grid(D: DiagonalModel, Pg: np.ndarray, M: int) -> np.ndarray:
    """[D, P] on the torus grid for P given by grid values (M,)*v + (N, N)."""
    mu = np.zeros((M,) * D.v + (len(D.d),), dtype=complex)
    mu[D.modes.grid_index(M)] = D.mu
    axes = tuple(range(D.v))
    mug = np.fft.ifftn(mu, axes=axes) * M ** D.v if D.v else mu
    lam = D.d + mug  # d_i + mu_i(theta)
    return 1j * (lam[..., :, None] - lam[..., None, :]) * Pg


def _dphi_grid(A: VarCoeffOperator, omega, M):
    fac = 1j * A.modes.dot(omega)
    return A.like(A.blocks * fac[:, None, None]).to_grid(M)


def homological_residual(D: DiagonalModel, Phi: VarCoeffOperator, R: VarCoeffOperator,
                         omega) -> VarCoeffOperator:
    """omega.d Phi + [D, Phi] + R - diag R, with products truncated like the solver."""
    M = product_grid(Phi.Kphi)
    G = _dphi_grid(Phi, omega, M) + _diag_commutator_grid(D, Phi.to_grid(M), M)
    return Phi.from_grid(G) + R.off_diag_part()


# ---------------------------------------------------------------------------
# one reduction step


@dataclass
class ReductionState:
    """Current diagonal model, remainder and the accumulated transforms."""

    D: DiagonalModel
    R: VarCoeffOperator
    omega: tuple
    Q: VarCoeffOperator | None = None
    step: int = 1
    outer: int = 1
    transforms: list = field(default_factory=list)  # (Phi, e^Phi, e^-Phi)
    history: list = field(default_factory=list)
    norm: NormParams = NormParams(0.0, 0.0)
    width: float | None = None

    def __post_init__(self):
        self.omega = tuple(float(w) for w in self.omega)
        if self.Q is None:
            self.Q = VarCoeffOperator.zeros(self.R.v, self.R.Kphi, self.R.Kx)

    @classmethod
    def from_regularized(cls, reg, outer: int = 1, norm: NormParams = NormParams(0.0, 0.0), width=None):
        c = reg.c1
        D = DiagonalModel.unperturbed(reg.m, c.v, c.Kphi, c.Kx)
        return cls(D, reg.remainder_operator(), reg.omega, outer=outer, norm=norm, width=width)

    def remainder_norm(self, kind: str = "varsigma") -> float:
        return decay_norm(self.R, kind, self.norm)

    def omega_apply(self, h: FourierField, inverse: bool = False) -> FourierField:
        """Omega h = e^Phi1 ... e^Phin h, or its inverse."""
        seq = [t[2] for t in self.transforms] if inverse else [t[1] for t in reversed(self.transforms)]
        for E in seq:
            h = op_apply(E, h)
        return h

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "outer": self.outer,
            "omega": list(self.omega),
            "norm": [self.norm.s, self.norm.p],
            "width": self.width,
            "D": self.D.to_json_dict(),
            "R": self.R.to_json_dict(),
            "Q": self.Q.to_json_dict(),
            "Phi": [t[0].to_json_dict() for t in self.transforms],
            "history": self.history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "ReductionState":
        d = json.loads(s)
        st = cls(DiagonalModel.from_json_dict(d["D"]), VarCoeffOperator.from_json_dict(d["R"]),
                 d["omega"], VarCoeffOperator.from_json_dict(d["Q"]), d["step"], d["outer"],
                 norm=NormParams(*d["norm"]), width=d["width"])
        for pd in d["Phi"]:
            P = VarCoeffOperator.from_json_dict(pd)
            st.transforms.append((P, op_exp(P, max_terms=200, c_p=0.0), op_exp(-P, max_terms=200, c_p=0.0)))
        st.history = d["history"]
        return st


def _split_diagonal(D: DiagonalModel, R: VarCoeffOperator):
    """New diagonal model and the constant real drift left in the remainder."""
    Rd = R.diag_series()
    zero = R.modes.zero
    avg = Rd[zero]
    mu_new = D.mu - 1j * Rd
    mu_new[zero] = 0.0
    d_new = D.d + avg.imag
    return DiagonalModel(d_new, mu_new, D.m, D.v, D.Kphi, D.Kx, separation=None), avg.real


def reduce_step(state: ReductionState, schedule=None, *, alpha: float | None = None,
                tau: float | None = None) -> ReductionState:
    """One KAM step; returns a new state.

    ``schedule`` (optional) supplies ``alpha(m, n)``, ``tau`` and ``sigma(m)``;
    explicit ``alpha``/``tau`` take precedence.
    """
    m, n = state.step, state.outer
    if alpha is None:
        alpha = schedule.alpha(m, n) if schedule is not None else 0.0
    if tau is None:
        tau = schedule.tau if schedule is not None else 0.0
    D, R, omega = state.D, state.R, state.omega
    before = decay_norm(R, "varsigma", state.norm)
    Phi = homological_solve(D, R, alpha, tau, omega)
    E, Einv = op_exp(Phi), op_exp(-Phi)
    M = product_grid(R.Kphi)
    Eg = E.to_grid(M)
    inner = _dphi_grid(E, omega, M) + _diag_commutator_grid(D, Eg, M) + np.matmul(R.to_grid(M), Eg)
    inner = E.from_grid(inner).to_grid(M)
    Y = E.from_grid(np.matmul(Einv.to_grid(M), inner))
    D_new, drift = _split_diagonal(D, R)
    b = Y.blocks - R.diag_part().blocks
    r = np.arange(R.N)
    b[R.modes.zero, r, r] += drift
    R_new = R.like(b, hamiltonian=R.hamiltonian)
    after = decay_norm(R_new, "varsigma", state.norm)
    rec = {"step": m, "remainder_before": before, "remainder_after": after,
           "phi_rho": decay_norm(Phi, "rho", state.norm), "alpha": alpha,
           "drift": float(np.max(np.abs(drift), initial=0.0))}
    if after > before:
        log.warning("KAM step %d did not contract the remainder (%.3e -> %.3e)", m, before, after)
        rec["contracted"] = False
    width = state.width
    if width is not None and schedule is not None:
        width = width - 2 * schedule.sigma(m)
    out = ReductionState(D_new, R_new, omega, state.Q, m + 1, n, state.transforms + [(Phi, E, Einv)],
                         state.history + [rec], state.norm, width)
    return out


def reduce(state: ReductionState, steps: int, schedule=None, **kw) -> ReductionState:
    for _ in range(steps):
        state = reduce_step(state, schedule, **kw)
    return state


def commutator_series_remainder(R: VarCoeffOperator, Phi: VarCoeffOperator,
                                terms: int = 30) -> VarCoeffOperator:
    """The telescoped form of the new remainder, used as an independent cross-check.

    sum_{n>=1} ad^n(R_diag)/n! + sum_{m>=1} ad^m(R_off)(1/m! - 1/(m+1)!),
    with ad(A) = [A, Phi]; it equals the new remainder plus the constant drift
    when the homological equation holds exactly.
    """
    from .decay_ops import commutator
    total = R.zeros(R.v, R.Kphi, R.Kx)
    for part, coef in ((R.diag_part(), lambda k: 1.0 / math.factorial(k)),
                       (R.off_diag_part(), lambda k: 1.0 / math.factorial(k) - 1.0 / math.factorial(k + 1))):
        A = part
        for k in range(1, terms + 1):
            A = commutator(A, Phi)
            total = total + A * coef(k)
    return total


# ---------------------------------------------------------------------------
# the diagonal operator and the approximate inverse


def apply_J(D: DiagonalModel, v: FourierField, omega) -> FourierField:
    """(omega.d_theta + i(d_k + mu_k)) v on the nonzero space modes."""
    return op_apply(D.operator(), v) + v.with_coeffs(
        v.coeffs * (1j * v.modes.dot(omega))[:, None], real=False)


def invert_J(D: DiagonalModel, g: FourierField, alpha: float, tau: float, omega) -> FourierField:
    """Solve omega.d v + i(d_k + mu_k) v = g mode by mode in k."""
    if not g.zero_mean_x:
        raise ConfigError("invert_J needs a zero space average right-hand side")
    tm = g.modes
    cols = D.kidx + g.Kx
    k = D.kidx.astype(float)
    floor = _melnikov_floor(alpha, tau, np.abs(k) ** 5, tm) if alpha else None
    try:
        sol = kuksin_solve_batch(D.d, D.mu.T, -1j * g.coeffs[:, cols].T, omega, g.v, g.Kphi, floor,
                                 labels=D.kidx.tolist())
    except SmallDivisorError as e:
        kk = getattr(e, "label", None)
        raise ParameterExcluded(
            f"first Melnikov condition fails for k = {kk} at ell = {e.ell}",
            {"kind": "first", "i": kk, "j": None, "ell": e.ell, "value": e.value, "floor": e.floor}) from e
    c = np.zeros_like(g.coeffs)
    c[:, cols] = sol.T
    return g.with_coeffs(c, real=False)


def approx_inverse(reg, state: ReductionState, F: FourierField, alpha: float = 0.0,
                   tau: float = 0.0) -> FourierField:
    """v = A B Omega J^{-1} Omega^{-1} (1/xi) B^{-1} A^{-1} F, an approximate solution of L v = F."""
    g = state.omega_apply(reg.U1_inv(F), inverse=True)
    w = invert_J(state.D, g.project_zero_mean_x(), alpha, tau, state.omega)
    return reg.U2(state.omega_apply(w).project_zero_mean_x())
