"""Linear operators whose matrix entries are functions of the torus angles.

An operator acting on functions of x is stored as ``blocks[a, r, c]``: the
torus Fourier coefficient ell_a of the entry A(phi)^{i2}_{i1} with row
i1 = kidx[r] (output mode) and column i2 = kidx[c] (input mode).  By default
the space modes exclude 0, which is the representation on zero-average
functions used by the reduction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .spectral_core import FourierField, NormParams, product_grid, torus_modes, torus_norm

__all__ = [
    "DECAY_KINDS",
    "VarCoeffOperator",
    "space_modes",
    "decay_norm",
    "from_multiplier",
    "op_mul",
    "op_apply",
    "op_exp",
    "op_dphi",
    "commutator",
]

DECAY_KINDS = ("plain", "varsigma", "tilde", "hat", "rho")
EXP_TOL = 1e-14
EXP_MAX_TERMS = 60


@lru_cache(maxsize=None)
def space_modes(Kx: int, include_zero: bool = False) -> np.ndarray:
    k = np.arange(-Kx, Kx + 1)
    out = k if include_zero else k[k != 0]
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class VarCoeffOperator:
    """Matrix with phi-dependent entries, truncated to |ell|_1 <= Kphi, |i| <= Kx."""

    blocks: np.ndarray = field(repr=False)
    v: int
    Kphi: int
    Kx: int
    include_zero: bool = False
    hamiltonian: bool = False

    def __post_init__(self):
        b = np.array(self.blocks, dtype=complex)
        N = len(space_modes(self.Kx, self.include_zero))
        shape = (torus_modes(self.v, self.Kphi).n, N, N)
        if b.shape != shape:
            raise ConfigError(f"block array has shape {b.shape}, expected {shape}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    # -- construction ---------------------------------------------------
    @classmethod
    def zeros(cls, v, Kphi, Kx, include_zero=False):
        N = len(space_modes(Kx, include_zero))
        return cls(np.zeros((torus_modes(v, Kphi).n, N, N)), v, Kphi, Kx, include_zero)

    @classmethod
    def identity(cls, v, Kphi, Kx, include_zero=False):
        return cls.diagonal(np.ones(len(space_modes(Kx, include_zero))), v, Kphi, Kx, include_zero)

    @classmethod
    def diagonal(cls, values, v, Kphi, Kx, include_zero=False, hamiltonian=False):
        """Diagonal operator; ``values`` is (N,) constants or (n_ell, N) torus series."""
        tm = torus_modes(v, Kphi)
        N = len(space_modes(Kx, include_zero))
        values = np.asarray(values, dtype=complex)
        b = np.zeros((tm.n, N, N), dtype=complex)
        r = np.arange(N)
        if values.ndim == 1:
            b[tm.zero, r, r] = values
        else:
            b[:, r, r] = values
        return cls(b, v, Kphi, Kx, include_zero, hamiltonian)

    @classmethod
    def derivative(cls, order, v, Kphi, Kx, include_zero=False):
        k = space_modes(Kx, include_zero)
        return cls.diagonal((1j * k) ** order, v, Kphi, Kx, include_zero)

    def like(self, blocks, hamiltonian=None) -> "VarCoeffOperator":
        return VarCoeffOperator(blocks, self.v, self.Kphi, self.Kx, self.include_zero,
                                self.hamiltonian if hamiltonian is None else hamiltonian)

    # -- structure ------------------------------------------------------
    @property
    def modes(self):
        return torus_modes(self.v, self.Kphi)

    @property
    def kidx(self) -> np.ndarray:
        return space_modes(self.Kx, self.include_zero)

    @property
    def N(self) -> int:
        return len(self.kidx)

    def _check(self, other):
        if (self.v, self.Kphi, self.Kx, self.include_zero) != (
                other.v, other.Kphi, other.Kx, other.include_zero):
            raise ConfigError("incompatible operator truncations")

    def diag_part(self) -> "VarCoeffOperator":
        r = np.arange(self.N)
        b = np.zeros_like(self.blocks)
        b[:, r, r] = self.blocks[:, r, r]
        return self.like(b)

    def off_diag_part(self) -> "VarCoeffOperator":
        return self - self.diag_part()

    def diag_series(self) -> np.ndarray:
        """Torus series of the diagonal entries, shape (n_ell, N)."""
        r = np.arange(self.N)
        return self.blocks[:, r, r]

    def __add__(self, other):
        self._check(other)
        return self.like(self.blocks + other.blocks, self.hamiltonian and other.hamiltonian)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.blocks - other.blocks, self.hamiltonian and other.hamiltonian)

    def __neg__(self):
        return self.like(-self.blocks)

    def __mul__(self, scalar):
        return self.like(self.blocks * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, VarCoeffOperator):
            return op_mul(self, other)
        return op_apply(self, other)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.blocks), initial=0.0))

    # -- grids ----------------------------------------------------------
    def to_grid(self, M: int | None = None) -> np.ndarray:
        """Entries on the torus grid, shape (M,)*v + (N, N)."""
        M = product_grid(self.Kphi) if M is None else M
        G = np.zeros((M,) * self.v + (self.N, self.N), dtype=complex)
        G[self.modes.grid_index(M)] = self.blocks
        axes = tuple(range(self.v))
        return np.fft.ifftn(G, axes=axes) * M ** self.v if self.v else G

    def from_grid(self, G: np.ndarray, hamiltonian=False) -> "VarCoeffOperator":
        M = G.shape[0] if self.v else 1
        axes = tuple(range(self.v))
        C = np.fft.fftn(G, axes=axes) / M ** self.v if self.v else G
        return self.like(C[self.modes.grid_index(M)], hamiltonian)

    # -- dense form for oracles -----------------------------------------
    def to_dense(self) -> np.ndarray:
        """Matrix on the basis (ell, k) ordered as ell-major, k-minor."""
        tm = self.modes
        di = tm.diff_index()
        N, n = self.N, tm.n
        out = np.zeros((n, N, n, N), dtype=complex)
        for a in range(n):
            for b in range(n):
                if di[a, b] >= 0:
                    out[a, :, b, :] = self.blocks[di[a, b]]
        return out.reshape(n * N, n * N)

    # -- serialization --------------------------------------------------
    def to_json_dict(self) -> dict:
        blocks = []
        for r, i1 in enumerate(self.kidx):
            for c, i2 in enumerate(self.kidx):
                col = self.blocks[:, r, c]
                nz = np.nonzero(col)[0]
                if len(nz):
                    blocks.append([int(i1), int(i2), [
                        [*(int(x) for x in self.modes.ells[a]), float(col[a].real), float(col[a].imag)]
                        for a in nz]])
        return {"v": self.v, "Kphi": self.Kphi, "Kx": self.Kx, "include_zero": self.include_zero,
                "hamiltonian": self.hamiltonian, "blocks": blocks}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict) -> "VarCoeffOperator":
        v, Kphi, Kx = int(d["v"]), int(d["Kphi"]), int(d["Kx"])
        inc = bool(d.get("include_zero", False))
        kidx = list(space_modes(Kx, inc))
        tm = torus_modes(v, Kphi)
        b = np.zeros((tm.n, len(kidx), len(kidx)), dtype=complex)
        for i1, i2, entries in d["blocks"]:
            r, c = kidx.index(i1), kidx.index(i2)
            for e in entries:
                b[tm.index[tuple(int(x) for x in e[:v])], r, c] = complex(e[v], e[v + 1])
        return cls(b, v, Kphi, Kx, inc, bool(d.get("hamiltonian", False)))

    @classmethod
    def from_json(cls, s: str) -> "VarCoeffOperator":
        return cls.from_json_dict(json.loads(s))


# ---------------------------------------------------------------------------
# norms


def _weights(kind: str, kidx: np.ndarray) -> np.ndarray:
    i1 = np.abs(kidx)[:, None].astype(float)
    i2 = np.abs(kidx)[None, :].astype(float)
    if kind == "plain":
        return np.ones((len(kidx), len(kidx)))
    if 0 in kidx:
        raise DomainError("weighted decay norms need space modes without 0")
    if kind == "varsigma":
        return 1.0 / (i1 ** 2 * i2)
    if kind == "tilde":
        return i2 ** 2 / i1 ** 2
    if kind == "hat":
        return i1 / i2
    raise ConfigError(f"unknown decay kind {kind!r}")


def decay_norm(A: VarCoeffOperator, kind: str, np_: NormParams) -> float:
    """(sum_i e^{2|i|s}[i]^{2p} sup_{i1-i2=i} ||w(i1,i2) A^{i2}_{i1}||_{s,p}^2)^{1/2}."""
    if kind == "rho":
        return max(decay_norm(A, k, np_) for k in ("plain", "tilde", "hat"))
    if kind not in DECAY_KINDS:
        raise ConfigError(f"unknown decay kind {kind!r}")
    w = _weights(kind, A.kidx)
    T = torus_norm(A.blocks, A.v, A.Kphi, np_.s, np_.p) * w
    off = A.kidx[:, None] - A.kidx[None, :]
    span = 2 * A.Kx
    sup = np.zeros(2 * span + 1)
    np.maximum.at(sup, (off + span).ravel(), T.ravel())
    i = np.arange(-span, span + 1)
    wt = np.exp(2 * np.abs(i) * np_.s) * np.maximum(np.abs(i), 1) ** (2.0 * np_.p)
    return math.sqrt(float(np.sum((wt * sup ** 2).astype(np.longdouble))))


# ---------------------------------------------------------------------------
# algebra


def from_multiplier(g: FourierField, include_zero: bool = False) -> VarCoeffOperator:
    """Multiplication h -> g h as the Toeplitz matrix T^{i}_{i'} = g_{i-i'}(phi)."""
    kidx = space_modes(g.Kx, include_zero)
    off = kidx[:, None] - kidx[None, :]
    inside = np.abs(off) <= g.Kx
    b = np.zeros((g.modes.n, len(kidx), len(kidx)), dtype=complex)
    b[:, inside] = g.coeffs[:, off[inside] + g.Kx]
    return VarCoeffOperator(b, g.v, g.Kphi, g.Kx, include_zero)


def op_mul(A: VarCoeffOperator, B: VarCoeffOperator, M: int | None = None) -> VarCoeffOperator:
    """Product of operators: matrix product with truncated torus convolution."""
    A._check(B)
    M = product_grid(A.Kphi) if M is None else M
    return A.from_grid(np.matmul(A.to_grid(M), B.to_grid(M)), A.hamiltonian and B.hamiltonian)


def op_apply(A: VarCoeffOperator, h: FourierField, M: int | None = None) -> FourierField:
    """(A h)_{i1}(phi) = sum_{i2} A^{i2}_{i1}(phi) h_{i2}(phi), truncated."""
    if (A.v, A.Kphi, A.Kx) != (h.v, h.Kphi, h.Kx):
        raise ConfigError("operator and field have different truncations")
    M = product_grid(A.Kphi) if M is None else M
    cols = A.kidx + A.Kx
    hg = np.zeros((M,) * A.v + (A.N,), dtype=complex)
    hg[h.modes.grid_index(M)] = h.coeffs[:, cols]
    axes = tuple(range(A.v))
    hg = np.fft.ifftn(hg, axes=axes) * M ** A.v if A.v else hg
    out = np.einsum("...ij,...j->...i", A.to_grid(M), hg)
    out = np.fft.fftn(out, axes=axes) / M ** A.v if A.v else out
    c = np.zeros_like(h.coeffs)
    c[:, cols] = out[h.modes.grid_index(M)]
    return h.with_coeffs(c, real=False)


def op_dphi(A: VarCoeffOperator, omega) -> VarCoeffOperator:
    """omega . d_phi applied to every entry."""
    fac = 1j * A.modes.dot(omega)
    return A.like(A.blocks * fac[:, None, None])


def commutator(A: VarCoeffOperator, B: VarCoeffOperator) -> VarCoeffOperator:
    return op_mul(A, B) - op_mul(B, A)


def op_exp(Phi: VarCoeffOperator, tol: float = EXP_TOL, max_terms: int = EXP_MAX_TERMS,
           c_p: float = 1.0, check: NormParams = NormParams(0.0, 0.0)) -> VarCoeffOperator:
    """e^Phi by the truncated series sum Phi^n/n!.

    Requires c_p |Phi| <= 1/2 in the plain decay norm ``check``; the series stops
    once a term has decay norm below ``tol``.
    """
    size = decay_norm(Phi, "plain", check)
    if c_p * size > 0.5:
        raise DomainError(f"exponential needs c|Phi| <= 1/2, got {c_p * size:.3e}")
    M = product_grid(Phi.Kphi)
    P = Phi.to_grid(M)
    eye = VarCoeffOperator.identity(Phi.v, Phi.Kphi, Phi.Kx, Phi.include_zero)
    total = eye.blocks.copy()
    term = eye
    for n in range(1, max_terms + 1):
        term = term.from_grid(np.matmul(term.to_grid(M), P) / n)
        total += term.blocks
        if decay_norm(term, "plain", check) < tol:
            return Phi.like(total, hamiltonian=False)
    raise NumericalError(f"exponential series did not converge in {max_terms} terms")
