"""Changes of variables: phi-dependent circle diffeomorphisms and time shifts.

``SpaceDiffeo`` carries x -> x + beta(phi, x) and its inverse y -> y + beta_hat(phi, y).
``TimeShift`` carries phi -> phi + omega*alpha(phi) and its inverse.  All
compositions are evaluated pointwise on a collocation grid by direct
exponential sums at the displaced points and then transformed back to modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .spectral_core import FourierField, NormParams, dx, norm_max, product_grid

__all__ = [
    "SpaceDiffeo",
    "TimeShift",
    "eval_x_shifted",
    "shift_phase",
    "eval_phi_shifted",
    "phi_grid",
    "x_grid",
    "invert_diffeo",
    "compose",
    "apply_A",
    "apply_B",
    "WIDTH_SHRINK",
]

WIDTH_SHRINK = 100.0 / 101.0
FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAXIT = 200


def x_grid(Mx: int) -> np.ndarray:
    return 2 * np.pi * np.arange(Mx) / Mx


def phi_grid(v: int, Mphi: int) -> np.ndarray:
    """Torus grid points as an array of shape (Mphi,)*v + (v,)."""
    axes = [2 * np.pi * np.arange(Mphi) / Mphi] * v
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1) if v else np.zeros((v,))


def _phi_spectrum(u: FourierField, Mphi: int) -> np.ndarray:
    """u_k(phi) on the torus grid: array (Mphi,)*v + (2Kx+1,)."""
    shape = (Mphi,) * u.v + (2 * u.Kx + 1,)
    G = np.zeros(shape, dtype=complex)
    idx = tuple(g[:, None] for g in u.modes.grid_index(Mphi)) + (np.arange(2 * u.Kx + 1)[None, :],)
    G[idx] = u.coeffs
    axes = tuple(range(u.v))
    return np.fft.ifftn(G, axes=axes) * (Mphi ** u.v) if u.v else G


def shift_phase(delta: np.ndarray, Kx: int) -> np.ndarray:
    """e^{ik(x_m + delta)} for |k| <= Kx, built by repeated multiplication."""
    e1 = np.exp(1j * (x_grid(delta.shape[-1]) + delta))
    out = np.empty(delta.shape + (2 * Kx + 1,), dtype=complex)
    out[..., Kx] = 1.0
    for k in range(1, Kx + 1):
        out[..., Kx + k] = out[..., Kx + k - 1] * e1
    out[..., :Kx] = np.conj(out[..., Kx + 1:][..., ::-1])
    return out


def eval_x_shifted(u: FourierField, delta: np.ndarray, phase: np.ndarray | None = None) -> np.ndarray:
    """Values u(phi_j, x_m + delta[j, m]) on the grid that ``delta`` lives on."""
    Mphi = delta.shape[0] if u.v else 1
    uk = _phi_spectrum(u, Mphi)
    if phase is None:
        phase = shift_phase(delta, u.Kx)
    vals = np.einsum("...k,...mk->...m", uk, phase)
    return vals.real if u.real else vals


def _x_spectrum(u: FourierField, Mx: int) -> np.ndarray:
    """u_ell(x) on the x grid: array (n_ell, Mx)."""
    G = np.zeros((u.modes.n, Mx), dtype=complex)
    G[:, np.mod(u.ks, Mx)] = u.coeffs
    return np.fft.ifft(G, axis=1) * Mx


def eval_phi_shifted(u: FourierField, shift: np.ndarray, Mx: int) -> np.ndarray:
    """Values u(phi_j + shift_j, x_m); ``shift`` has shape (Mphi,)*v + (v,)."""
    Mphi = shift.shape[0]
    pts = phi_grid(u.v, Mphi) + shift
    phase = np.exp(1j * np.tensordot(pts, u.modes.ells.T.astype(float), axes=1))
    vals = np.tensordot(phase, _x_spectrum(u, Mx), axes=1)
    return vals.real if u.real else vals


@dataclass(frozen=True, eq=False)
class SpaceDiffeo:
    """x -> x + beta(phi, x), with the inverse displacement computed lazily."""

    beta: FourierField
    Mphi: int | None = None
    Mx: int | None = None
    smallness: float = 1.0 / 100.0
    check: NormParams = NormParams(0.0, 1)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.Mphi is None:
            object.__setattr__(self, "Mphi", product_grid(self.beta.Kphi))
        if self.Mx is None:
            object.__setattr__(self, "Mx", product_grid(self.beta.Kx))
        if self.beta.real is False and self.beta.reality_defect() > 1e-14:
            raise DomainError("beta must be real")
        size = norm_max(self.beta, self.check)
        if size > self.smallness:
            raise DomainError(f"|beta|={size:.3e} exceeds the smallness bound {self.smallness}")
        bx = dx(self.beta).to_grid(self.Mphi, self.Mx)
        if np.min(1.0 + bx) <= 0:
            raise DomainError("x + beta(phi, x) is not increasing")
        self._cache["size"] = size

    @property
    def shape(self):
        return (self.Mphi,) * self.beta.v + (self.Mx,)

    def beta_grid(self) -> np.ndarray:
        return self.beta.to_grid(self.Mphi, self.Mx)

    @property
    def beta_hat(self) -> FourierField:
        if "beta_hat" not in self._cache:
            self._cache["beta_hat"] = invert_diffeo(self)
        return self._cache["beta_hat"]

    def beta_hat_grid(self) -> np.ndarray:
        if "beta_hat_grid" not in self._cache:
            self.beta_hat
        return self._cache["beta_hat_grid"]

    def phase(self, inverse: bool = False) -> np.ndarray:
        key = ("phase", inverse)
        if key not in self._cache:
            shift = self.beta_hat_grid() if inverse else self.beta_grid()
            self._cache[key] = shift_phase(shift, self.beta.Kx)
        return self._cache[key]


def invert_diffeo(d: SpaceDiffeo, tol: float = FIXED_POINT_TOL,
                  maxit: int = FIXED_POINT_MAXIT) -> FourierField:
    """beta_hat with y = x + beta(x)  <=>  x = y + beta_hat(y).

    Fixed point beta_hat <- -beta(phi, y + beta_hat) on the grid.
    """
    beta = d.beta
    lip = float(np.max(np.abs(dx(beta).to_grid(d.Mphi, d.Mx))))
    if lip >= 1.0:
        raise DomainError(f"fixed point map is not a contraction (sup|beta_x|={lip:.3f})")
    bh = -d.beta_grid()
    for it in range(maxit):
        new = -eval_x_shifted(beta, bh)
        change = float(np.max(np.abs(new - bh)))
        bh = new
        if change < tol:
            break
    else:
        raise NumericalError(f"diffeomorphism inversion did not converge in {maxit} iterations")
    d._cache["beta_hat_grid"] = bh
    d._cache["iterations"] = it + 1
    out = FourierField.from_grid(bh, beta.v, beta.Kphi, beta.Kx, real=True)
    d._cache["ratio"] = out.l2() / beta.l2() if beta.l2() > 0 else 0.0
    return out


def _shrink(width):
    return None if width is None else width * WIDTH_SHRINK


def compose(u: FourierField, d: SpaceDiffeo, inverse: bool = False) -> FourierField:
    """(T u)(phi, x) = u(phi, x + beta), or u(phi, y + beta_hat) for the inverse."""
    if not u.compatible(d.beta):
        raise ConfigError("field and diffeomorphism have different truncations")
    shift = d.beta_hat_grid() if inverse else d.beta_grid()
    vals = eval_x_shifted(u, shift, d.phase(inverse))
    return FourierField.from_grid(vals, u.v, u.Kphi, u.Kx, real=u.real, width=_shrink(u.width))


def apply_A(d: SpaceDiffeo, h: FourierField, inverse: bool = False) -> FourierField:
    """(A h) = (1 + beta_x) h(phi, x + beta); the inverse uses beta_hat."""
    if not h.compatible(d.beta):
        raise ConfigError("field and diffeomorphism have different truncations")
    b = d.beta_hat if inverse else d.beta
    shift = d.beta_hat_grid() if inverse else d.beta_grid()
    jac = 1.0 + dx(b).to_grid(d.Mphi, d.Mx)
    vals = jac * eval_x_shifted(h, shift, d.phase(inverse))
    out = FourierField.from_grid(vals, h.v, h.Kphi, h.Kx, real=h.real, width=_shrink(h.width))
    # the exact map preserves the x-average; drop the rounding residue
    return out.project_zero_mean_x() if h.zero_mean_x else out


@dataclass(frozen=True, eq=False)
class TimeShift:
    """phi -> phi + omega*alpha(phi) with alpha a zero-mean function of phi."""

    alpha: FourierField
    omega: tuple
    Mphi: int | None = None
    smallness: float = 1.0 / 100.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if len(self.omega) != self.alpha.v:
            raise ConfigError("omega has the wrong dimension")
        if self.Mphi is None:
            object.__setattr__(self, "Mphi", product_grid(self.alpha.Kphi))
        if not self.alpha.phi_only:
            raise DomainError("alpha must not depend on x")
        if abs(self.alpha.coeffs[self.alpha.modes.zero, self.alpha.Kx]) > 1e-14:
            raise DomainError("alpha must have zero torus average")
        size = float(np.max(np.abs(self.alpha_grid()), initial=0.0))
        if size > self.smallness:
            raise DomainError(f"|alpha|={size:.3e} exceeds the smallness bound {self.smallness}")

    def _column(self, f: FourierField) -> np.ndarray:
        """Torus values of the x-independent field f on the grid."""
        col = f.coeffs[:, f.Kx]
        g = np.zeros((self.Mphi,) * f.v, dtype=complex)
        g[f.modes.grid_index(self.Mphi)] = col
        vals = np.fft.ifftn(g) * g.size
        return vals.real if f.real else vals

    def alpha_grid(self) -> np.ndarray:
        return self._column(self.alpha)

    @property
    def alpha_hat(self) -> FourierField:
        if "alpha_hat" not in self._cache:
            self._invert()
        return self._cache["alpha_hat"]

    def alpha_hat_grid(self) -> np.ndarray:
        if "alpha_hat_grid" not in self._cache:
            self._invert()
        return self._cache["alpha_hat_grid"]

    def _eval_alpha(self, shift_scalar: np.ndarray) -> np.ndarray:
        a = self.alpha
        pts = phi_grid(a.v, self.Mphi) + shift_scalar[..., None] * np.asarray(self.omega)
        phase = np.exp(1j * np.tensordot(pts, a.modes.ells.T.astype(float), axes=1))
        vals = phase @ a.coeffs[:, a.Kx]
        return vals.real if a.real else vals

    def _invert(self, tol=FIXED_POINT_TOL, maxit=FIXED_POINT_MAXIT):
        a = self.alpha
        from .spectral_core import dphi_omega
        lip = float(np.max(np.abs(self._column(dphi_omega(a, self.omega))), initial=0.0))
        if lip >= 1.0:
            raise DomainError("time reparametrization is not invertible")
        ah = -self.alpha_grid()
        for it in range(maxit):
            new = -self._eval_alpha(ah)
            change = float(np.max(np.abs(new - ah), initial=0.0))
            ah = new
            if change < tol:
                break
        else:
            raise NumericalError("time-shift inversion did not converge")
        self._cache["alpha_hat_grid"] = ah
        G = np.fft.fftn(ah) / ah.size
        c = np.zeros_like(a.coeffs)
        c[:, a.Kx] = G[a.modes.grid_index(self.Mphi)]
        self._cache["alpha_hat"] = a.with_coeffs(c, real=True)


def apply_B(t: TimeShift, h: FourierField, inverse: bool = False, Mx: int | None = None) -> FourierField:
    """(B h)(phi, y) = h(phi + omega*alpha(phi), y); the inverse uses alpha_hat."""
    if h.v != t.alpha.v or h.Kphi != t.alpha.Kphi:
        raise ConfigError("field and time shift have different torus truncations")
    Mx = 2 * h.Kx + 1 if Mx is None else Mx
    a = t.alpha_hat_grid() if inverse else t.alpha_grid()
    shift = a[..., None] * np.asarray(t.omega)
    vals = eval_phi_shifted(h, shift, Mx)
    out = FourierField.from_grid(vals, h.v, h.Kphi, h.Kx, real=h.real, width=_shrink(h.width))
    return out.project_zero_mean_x() if h.zero_mean_x else out
