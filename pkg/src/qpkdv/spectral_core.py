"""Truncated Fourier fields on T^v x T.

A field is stored as a dense array ``coeffs[a, b]`` where ``a`` runs over the
torus modes ell with |ell|_1 <= Kphi (see :class:`TorusModes`) and ``b = k + Kx``
runs over the space modes -Kx..Kx.  Products and compositions are evaluated on
a collocation grid and transformed back, which makes them exact truncated
convolutions as long as the grid is large enough (3K+1 points per axis for a
product of two fields).
"""
from __future__ import annotations

import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, SmallDivisorError

__all__ = [
    "TorusModes",
    "torus_modes",
    "FourierField",
    "NormParams",
    "LambdaFamily",
    "product_grid",
    "norm_sp",
    "norm_frak",
    "norm_joint",
    "norm_max",
    "torus_norm",
    "lip_norm",
    "mul",
    "dx",
    "dphi_omega",
    "dphi",
    "dx_inv",
    "omega_dphi_inv",
    "symplectic_form",
]


def _lsum(x) -> float:
    """Sum in extended precision."""
    return float(np.sum(np.asarray(x, dtype=np.longdouble)))


# ---------------------------------------------------------------------------
# torus index sets


@dataclass(frozen=True, eq=False)
class TorusModes:
    """The ell^1 ball {ell in Z^v : |ell|_1 <= K} in a fixed order."""

    v: int
    K: int
    ells: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.ells.shape[0]

    @property
    def l1(self) -> np.ndarray:
        return np.abs(self.ells).sum(axis=1)

    @property
    def bracket(self) -> np.ndarray:
        return np.maximum(self.l1, 1)

    @property
    def zero(self) -> int:
        return self.index[(0,) * self.v]

    @property
    def index(self) -> dict:
        return _mode_index(self.v, self.K)

    @property
    def neg(self) -> np.ndarray:
        return _neg_index(self.v, self.K)

    def dot(self, omega) -> np.ndarray:
        """omega . ell for every retained ell."""
        return self.ells @ np.asarray(omega, dtype=float)

    def diff_index(self) -> np.ndarray:
        """Table t[a, b] = index of ell_a - ell_b, or -1 when outside the ball."""
        return _diff_index(self.v, self.K)

    def grid_index(self, M: int) -> tuple:
        """Per-dimension wrapped indices of every ell on an M^v grid."""
        return _grid_index(self.v, self.K, M)


@lru_cache(maxsize=None)
def torus_modes(v: int, K: int) -> TorusModes:
    if v < 0 or K < 0:
        raise ConfigError("v and K must be nonnegative")
    rng = range(-K, K + 1)
    ells = [e for e in itertools.product(rng, repeat=v) if sum(map(abs, e)) <= K]
    arr = np.array(ells, dtype=np.int64).reshape(len(ells), v)
    arr.setflags(write=False)
    return TorusModes(v, K, arr)


@lru_cache(maxsize=None)
def _mode_index(v, K):
    return {tuple(int(x) for x in e): i for i, e in enumerate(torus_modes(v, K).ells)}


@lru_cache(maxsize=None)
def _neg_index(v, K):
    idx = _mode_index(v, K)
    out = np.array([idx[tuple(-x for x in e)] for e in idx], dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _diff_index(v, K):
    tm = torus_modes(v, K)
    idx = _mode_index(v, K)
    d = tm.ells[:, None, :] - tm.ells[None, :, :]
    out = np.full(d.shape[:2], -1, dtype=np.int64)
    ok = np.abs(d).sum(axis=2) <= K
    for a, b in zip(*np.nonzero(ok)):
        out[a, b] = idx[tuple(int(x) for x in d[a, b])]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _grid_index(v, K, M):
    if M < 2 * K + 1:
        raise ConfigError(f"grid size {M} too small for torus truncation {K}")
    ells = torus_modes(v, K).ells
    return tuple(np.mod(ells[:, j], M) for j in range(v))


def product_grid(K: int, factor: int = 3) -> int:
    """Grid size per axis for alias-free truncated products of ``factor - 1`` fields."""
    return factor * K + 1


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class NormParams:
    """Analyticity width s, regularity p and the fixed integer s0."""

    s: float
    p: float
    s0: int | None = None

    def __post_init__(self):
        if not (self.s >= 0 and math.isfinite(self.s)):
            raise ConfigError(f"width s must be >= 0, got {self.s}")
        if not (self.p >= 0 and math.isfinite(self.p)):
            raise ConfigError(f"regularity p must be >= 0, got {self.p}")

    def check_s0(self, v: int) -> None:
        if self.s0 is not None and not self.s0 > (v + 1) / 2:
            raise ConfigError(f"s0 must exceed (v+1)/2 = {(v + 1) / 2}")


PI_LOW, PI_HIGH = 0.5, 1.5


@dataclass(frozen=True)
class LambdaFamily:
    """Parameter samples lambda in [1/2, 3/2] with arbitrary payloads."""

    samples: tuple
    omega_bar: tuple
    alpha0: float = 0.0
    tau0: float = 0.0

    def __post_init__(self):
        samples = tuple((float(lam), pay) for lam, pay in self.samples)
        for lam, _ in samples:
            if not PI_LOW <= lam <= PI_HIGH:
                raise ConfigError(f"lambda={lam} outside [1/2, 3/2]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "omega_bar", tuple(float(w) for w in self.omega_bar))

    @classmethod
    def equispaced(cls, payload: Callable[[float], Any], omega_bar, n: int = 5, **kw):
        lams = np.linspace(PI_LOW, PI_HIGH, n)
        return cls(tuple((lam, payload(lam)) for lam in lams), tuple(omega_bar), **kw)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.samples])

    def omega(self, lam: float) -> np.ndarray:
        return lam * np.asarray(self.omega_bar)


# ---------------------------------------------------------------------------
# the field type


@lru_cache(maxsize=None)
def _scatter_index(v, Kphi, Kx, Mphi, Mx):
    gi = _grid_index(v, Kphi, Mphi)
    if Mx < 2 * Kx + 1:
        raise ConfigError(f"grid size {Mx} too small for space truncation {Kx}")
    kk = np.mod(np.arange(-Kx, Kx + 1), Mx)
    return tuple(g[:, None] for g in gi) + (kk[None, :],)


@dataclass(frozen=True, eq=False)
class FourierField:
    """Truncated double Fourier series sum u[ell,k] e^{i(ell.phi + k x)}."""

    coeffs: np.ndarray = field(repr=False)
    v: int
    Kphi: int
    Kx: int
    real: bool = False
    width: float | None = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        shape = (torus_modes(self.v, self.Kphi).n, 2 * self.Kx + 1)
        if c.shape != shape:
            raise ConfigError(f"coefficient array has shape {c.shape}, expected {shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # -- construction ---------------------------------------------------
    @classmethod
    def zeros(cls, v, Kphi, Kx, real=True):
        return cls(np.zeros((torus_modes(v, Kphi).n, 2 * Kx + 1)), v, Kphi, Kx, real)

    @classmethod
    def constant(cls, c, v, Kphi, Kx):
        out = np.zeros((torus_modes(v, Kphi).n, 2 * Kx + 1), dtype=complex)
        out[torus_modes(v, Kphi).zero, Kx] = c
        return cls(out, v, Kphi, Kx, real=bool(np.imag(c) == 0))

    @classmethod
    def from_modes(cls, triples: Iterable, v, Kphi, Kx, real=True):
        """Build from (ell, k, amplitude) triples; real fields get conjugate partners."""
        tm = torus_modes(v, Kphi)
        out = np.zeros((tm.n, 2 * Kx + 1), dtype=complex)
        for ell, k, amp in triples:
            ell = tuple(int(x) for x in np.atleast_1d(ell))
            if len(ell) != v or sum(map(abs, ell)) > Kphi or abs(k) > Kx:
                raise ConfigError(f"mode {ell},{k} outside the truncation")
            out[tm.index[ell], k + Kx] += amp
            if real:
                neg = tuple(-x for x in ell)
                if neg == ell and k == 0:
                    out[tm.index[ell], Kx] += np.conj(amp)
                else:
                    out[tm.index[neg], -k + Kx] += np.conj(amp)
        return cls(out, v, Kphi, Kx, real)

    @classmethod
    def random(cls, rng, v, Kphi, Kx, decay=0.3, real=True, zero_mean_x=True, scale=1.0):
        """Random field with coefficients ~ e^{-decay(|ell|+|k|)}."""
        tm = torus_modes(v, Kphi)
        ks = np.arange(-Kx, Kx + 1)
        env = np.exp(-decay * (tm.l1[:, None] + np.abs(ks)[None, :]))
        c = (rng.standard_normal(env.shape) + 1j * rng.standard_normal(env.shape)) * env
        if real:
            c = 0.5 * (c + np.conj(c[tm.neg][:, ::-1]))
        if zero_mean_x:
            c[:, Kx] = 0
        return cls(scale * c, v, Kphi, Kx, real)

    def with_coeffs(self, c, real=None, width=None) -> "FourierField":
        return FourierField(
            c, self.v, self.Kphi, self.Kx,
            self.real if real is None else real,
            self.width if width is None else width,
        )

    # -- basic properties -----------------------------------------------
    @property
    def modes(self) -> TorusModes:
        return torus_modes(self.v, self.Kphi)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.Kx, self.Kx + 1)

    @property
    def zero_mean_x(self) -> bool:
        return bool(np.all(self.coeffs[:, self.Kx] == 0))

    @property
    def zero_mean_phi(self) -> bool:
        return bool(np.all(self.coeffs[self.modes.zero] == 0))

    @property
    def phi_only(self) -> bool:
        c = self.coeffs.copy()
        c[:, self.Kx] = 0
        return not np.any(c)

    def reality_defect(self) -> float:
        """max |u[-ell,-k] - conj(u[ell,k])|."""
        c = self.coeffs
        return float(np.max(np.abs(c[self.modes.neg][:, ::-1] - np.conj(c)), initial=0.0))

    def coefficient(self, ell, k) -> complex:
        return complex(self.coeffs[self.modes.index[tuple(ell)], k + self.Kx])

    def compatible(self, other: "FourierField") -> bool:
        return (self.v, self.Kphi, self.Kx) == (other.v, other.Kphi, other.Kx)

    def _check(self, other):
        if not self.compatible(other):
            raise ConfigError("incompatible truncations")

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, FourierField):
            self._check(other)
            return self.with_coeffs(self.coeffs + other.coeffs, self.real and other.real)
        c = self.coeffs.copy()
        c[self.modes.zero, self.Kx] += other
        return self.with_coeffs(c, self.real and np.isrealobj(other))

    __radd__ = __add__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FourierField):
            return mul(self, other)
        return self.with_coeffs(self.coeffs * other, self.real and np.isrealobj(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def conj(self):
        c = np.conj(self.coeffs[self.modes.neg][:, ::-1])
        return self.with_coeffs(c)

    def real_part(self):
        """The field (u + conj u)/2, which is real-valued."""
        return self.with_coeffs(0.5 * (self.coeffs + self.conj().coeffs), real=True)

    def l2(self) -> float:
        return math.sqrt(_lsum(np.abs(self.coeffs) ** 2))

    def max_abs_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    # -- truncation changes ---------------------------------------------
    def resize(self, Kphi: int, Kx: int) -> "FourierField":
        """Embed into or truncate to another truncation."""
        src, dst = self.modes, torus_modes(self.v, Kphi)
        out = np.zeros((dst.n, 2 * Kx + 1), dtype=complex)
        kmin = min(Kx, self.Kx)
        for i, e in enumerate(src.ells):
            j = dst.index.get(tuple(int(x) for x in e))
            if j is not None:
                out[j, Kx - kmin:Kx + kmin + 1] = self.coeffs[i, self.Kx - kmin:self.Kx + kmin + 1]
        return FourierField(out, self.v, Kphi, Kx, self.real, self.width)

    def project_zero_mean_x(self) -> "FourierField":
        c = self.coeffs.copy()
        c[:, self.Kx] = 0
        return self.with_coeffs(c)

    # -- grids ----------------------------------------------------------
    def grid_shape(self, Mphi=None, Mx=None) -> tuple:
        Mphi = product_grid(self.Kphi) if Mphi is None else Mphi
        Mx = product_grid(self.Kx) if Mx is None else Mx
        return (Mphi,) * self.v + (Mx,)

    def to_grid(self, Mphi=None, Mx=None, force_complex=False) -> np.ndarray:
        """Values at the uniform grid phi_j = 2 pi j / Mphi, x_m = 2 pi m / Mx."""
        shape = self.grid_shape(Mphi, Mx)
        G = np.zeros(shape, dtype=complex)
        G[_scatter_index(self.v, self.Kphi, self.Kx, shape[0] if self.v else 1, shape[-1])] = self.coeffs
        vals = np.fft.ifftn(G) * G.size
        return vals if (force_complex or not self.real) else vals.real

    @classmethod
    def from_grid(cls, values, v, Kphi, Kx, real=None, width=None) -> "FourierField":
        values = np.asarray(values)
        if real is None:
            real = not np.iscomplexobj(values)
        C = np.fft.fftn(values) / values.size
        Mphi = values.shape[0] if v else 1
        c = C[_scatter_index(v, Kphi, Kx, Mphi, values.shape[-1])]
        out = cls(c, v, Kphi, Kx, real, width)
        return out

    # -- serialization --------------------------------------------------
    def to_json_dict(self) -> dict:
        rows = []
        for a, e in enumerate(self.modes.ells):
            for b in np.nonzero(self.coeffs[a])[0]:
                z = self.coeffs[a, b]
                rows.append([*(int(x) for x in e), int(b - self.Kx), float(z.real), float(z.imag)])
        return {"v": self.v, "Kphi": self.Kphi, "Kx": self.Kx, "real_flag": bool(self.real), "coeffs": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict) -> "FourierField":
        v, Kphi, Kx = int(d["v"]), int(d["Kphi"]), int(d["Kx"])
        tm = torus_modes(v, Kphi)
        out = np.zeros((tm.n, 2 * Kx + 1), dtype=complex)
        for row in d["coeffs"]:
            ell = tuple(int(x) for x in row[:v])
            k = int(row[v])
            if ell not in tm.index or abs(k) > Kx:
                raise ConfigError(f"mode {ell},{k} outside the declared truncation")
            out[tm.index[ell], k + Kx] = complex(row[v + 1], row[v + 2])
        return cls(out, v, Kphi, Kx, bool(d.get("real_flag", False)))

    @classmethod
    def from_json(cls, s: str) -> "FourierField":
        return cls.from_json_dict(json.loads(s))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        header = np.array([self.v, self.Kphi, self.Kx, int(self.real)], dtype=np.int64)
        np.save(buf, header)
        np.save(buf, self.coeffs)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, b: bytes) -> "FourierField":
        buf = io.BytesIO(b)
        v, Kphi, Kx, real = (int(x) for x in np.load(buf))
        return cls(np.load(buf), v, Kphi, Kx, bool(real))


# ---------------------------------------------------------------------------
# norms


def _abs_ell_k(u: FourierField):
    return u.modes.l1[:, None], np.abs(u.ks)[None, :]


def norm_sp(u: FourierField, np_: NormParams) -> float:
    """(sum |u|^2 e^{2(|ell|+|k|)s} ([ell]+[k])^{2p})^{1/2}."""
    L, K = _abs_ell_k(u)
    w = np.exp(2 * (L + K) * np_.s) * (np.maximum(L, 1) + np.maximum(K, 1)) ** (2.0 * np_.p)
    return math.sqrt(_lsum(np.abs(u.coeffs) ** 2 * w))


def norm_frak(u: FourierField, np_: NormParams) -> float:
    """(sum |u|^2 e^{2(|ell|+|k|)s} [k]^{2p} [ell]^{2p})^{1/2}."""
    L, K = _abs_ell_k(u)
    w = np.exp(2 * (L + K) * np_.s) * (np.maximum(L, 1) * np.maximum(K, 1)) ** (2.0 * np_.p)
    return math.sqrt(_lsum(np.abs(u.coeffs) ** 2 * w))


def norm_joint(u: FourierField, np_: NormParams) -> float:
    """Single-index norm on Z^{v+1}: weight e^{2|n|s}[n]^{2p}, n = (ell, k)."""
    L, K = _abs_ell_k(u)
    w = np.exp(2 * (L + K) * np_.s) * np.maximum(L + K, 1) ** (2.0 * np_.p)
    return math.sqrt(_lsum(np.abs(u.coeffs) ** 2 * w))


def torus_norm(a: np.ndarray, v: int, K: int, s: float, p: float) -> np.ndarray:
    """Norm of torus series along the first axis: (sum |a_ell|^2 e^{2|ell|s}[ell]^{2p})^{1/2}."""
    tm = torus_modes(v, K)
    w = np.exp(2 * tm.l1 * s) * tm.bracket ** (2.0 * p)
    a = np.asarray(a)
    w = w.reshape((-1,) + (1,) * (a.ndim - 1))
    return np.sqrt(np.sum((np.abs(a) ** 2 * w).astype(np.longdouble), axis=0)).astype(float)


def _multi_indices(n: int, p: int):
    for total in range(p + 1):
        for c in itertools.combinations_with_replacement(range(n), total):
            alpha = [0] * n
            for j in c:
                alpha[j] += 1
            yield tuple(alpha)


def norm_max(u: FourierField, np_: NormParams, oversample: int = 2) -> float:
    """sum_{|alpha|<=p} sup |D^alpha u| over the closed complex strip of width s.

    For a trigonometric polynomial the supremum over the polystrip is reached on
    the distinguished boundary Im z_j = +-s; each of the 2^{v+1} corners is
    scanned on a real grid refined by ``oversample``.
    """
    if float(np_.p) != int(np_.p):
        raise ConfigError("norm_max needs an integer p")
    n = u.v + 1
    tm = u.modes
    nvec = [tm.ells[:, j][:, None] * np.ones((1, 2 * u.Kx + 1), dtype=np.int64) for j in range(u.v)]
    nvec.append(np.ones((tm.n, 1), dtype=np.int64) * u.ks[None, :])
    Mphi = oversample * (2 * u.Kphi + 1)
    Mx = oversample * (2 * u.Kx + 1)
    corners = list(itertools.product((-1.0, 1.0), repeat=n)) if np_.s > 0 else [(0.0,) * n]
    total = 0.0
    for alpha in _multi_indices(n, int(np_.p)):
        fac = np.ones(u.coeffs.shape, dtype=complex)
        for j, a in enumerate(alpha):
            if a:
                fac = fac * (1j * nvec[j]) ** a
        best = 0.0
        for sig in corners:
            damp = np.exp(-np_.s * sum(sg * nv for sg, nv in zip(sig, nvec)))
            w = u.with_coeffs(u.coeffs * fac * damp, real=False)
            best = max(best, float(np.max(np.abs(w.to_grid(Mphi, Mx)))))
        total += best
    return total


def lip_norm(fam: LambdaFamily, norm: Callable[[Any], float]) -> float:
    """sup_lambda |f(lambda)| + max over sample pairs of the difference quotient."""
    if len(fam.samples) < 2:
        raise ConfigError("a Lipschitz norm needs at least two lambda samples")
    sup = max(norm(pay) for _, pay in fam.samples)
    lip = 0.0
    for (l1, p1), (l2, p2) in itertools.combinations(fam.samples, 2):
        if l1 != l2:
            lip = max(lip, norm(p1 - p2) / abs(l1 - l2))
    return sup + lip


# ---------------------------------------------------------------------------
# algebra and calculus


def mul(u: FourierField, w: FourierField, Mphi=None, Mx=None) -> FourierField:
    """Truncated product computed on an alias-free collocation grid."""
    u._check(w)
    Mphi = product_grid(u.Kphi) if Mphi is None else Mphi
    Mx = product_grid(u.Kx) if Mx is None else Mx
    real = u.real and w.real
    g = u.to_grid(Mphi, Mx, force_complex=not real) * w.to_grid(Mphi, Mx, force_complex=not real)
    return FourierField.from_grid(g, u.v, u.Kphi, u.Kx, real=real)


def dx(u: FourierField, order: int = 1) -> FourierField:
    if order < 0:
        raise ConfigError("use dx_inv for negative orders")
    return u.with_coeffs(u.coeffs * ((1j * u.ks) ** order)[None, :])


def dphi(u: FourierField, j: int) -> FourierField:
    """Partial derivative in the torus angle phi_j."""
    return u.with_coeffs(u.coeffs * (1j * u.modes.ells[:, j])[:, None])


def dphi_omega(u: FourierField, omega) -> FourierField:
    """omega . d_phi u."""
    return u.with_coeffs(u.coeffs * (1j * u.modes.dot(omega))[:, None])


def dx_inv(u: FourierField, tol: float = 0.0) -> FourierField:
    """Primitive in x with zero average."""
    if np.max(np.abs(u.coeffs[:, u.Kx]), initial=0.0) > tol:
        raise DomainError("dx_inv needs a field with zero space average")
    ks = u.ks.astype(complex)
    inv = np.zeros_like(ks)
    nz = ks != 0
    inv[nz] = 1.0 / (1j * ks[nz])
    return u.with_coeffs(u.coeffs * inv[None, :])


def omega_dphi_inv(u: FourierField, omega, alpha0: float | None = None, tau0: float = 0.0,
                   tol: float = 0.0) -> FourierField:
    """Inverse of omega . d_phi on fields with zero torus average.

    When ``alpha0`` is given every divisor must satisfy |omega.ell| >= alpha0/[ell]^tau0.
    """
    tm = u.modes
    if np.max(np.abs(u.coeffs[tm.zero]), initial=0.0) > tol:
        raise DomainError("omega_dphi_inv needs a field with zero torus average")
    div = tm.dot(omega)
    floor = np.zeros_like(div) if alpha0 is None else alpha0 / tm.bracket.astype(float) ** tau0
    nz = np.arange(tm.n) != tm.zero
    bad = nz & ((np.abs(div) < floor) | (div == 0))
    if np.any(bad):
        a = int(np.argmin(np.where(bad, np.abs(div), np.inf)))
        raise SmallDivisorError(
            f"small divisor omega.ell={div[a]:.3e} at ell={tuple(tm.ells[a])}",
            ell=tm.ells[a], value=float(div[a]), floor=float(floor[a]))
    inv = np.zeros(tm.n, dtype=complex)
    inv[nz] = 1.0 / (1j * div[nz])
    return u.with_coeffs(u.coeffs * inv[:, None])


def symplectic_form(u: FourierField, w: FourierField) -> np.ndarray:
    """Omega(u, w)(phi) = average over x of (dx^{-1} u) w, on the torus grid.

    The x-grid has 2Kx+1 points, which integrates the product exactly.
    """
    u._check(w)
    U = dx_inv(u)
    Mphi = product_grid(u.Kphi)
    Mx = 2 * u.Kx + 1
    gu = U.to_grid(Mphi, Mx, force_complex=True)
    gw = w.to_grid(Mphi, Mx, force_complex=True)
    return np.mean(gu * gw, axis=-1)
