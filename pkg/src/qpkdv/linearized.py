"""The quasi-periodically forced fifth-order KdV residual and its linearization.

F(u) = omega.d_phi u + u_5 + 10 u u_3 + 20 u_1 u_2 + 30 u^2 u_1 - 6 u_2 u_5
       - 18 u_3 u_4 - d_x f

where u_j = d_x^j u.  The linearization is kept in divergence form

L h = omega.d_phi h + d_x{ d_x^2(a2 d_x^2 h) + d_x(a1 d_x h) + a0 h }

with a2 = 1 - 6 u_xx, a1 = 10 u, a0 = 10 u_xx + 30 u^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decay_ops import VarCoeffOperator, from_multiplier
from .errors import ConfigError
from .spectral_core import FourierField, LambdaFamily, NormParams, dphi_omega, dx, mul, norm_sp

__all__ = [
    "KdVProblem",
    "forcing_from_modes",
    "residual_F",
    "coeffs_a",
    "coeffs_a_star",
    "coeffs_a_derivative",
    "LinearizedOperator",
    "build_L",
]


@dataclass(frozen=True, eq=False)
class KdVProblem:
    """Forcing d_x f, frequency direction omega_bar and the parameter lambda."""

    forcing: FourierField
    omega_bar: tuple
    lam: float = 1.0
    eps: float | None = None
    eps0: float | None = None
    lambda_family: LambdaFamily | None = None

    def __post_init__(self):
        object.__setattr__(self, "omega_bar", tuple(float(w) for w in self.omega_bar))
        if len(self.omega_bar) != self.forcing.v:
            raise ConfigError("omega_bar must have one entry per torus angle")
        if not self.forcing.zero_mean_x:
            raise ConfigError("the forcing d_x f must have zero space average")
        if self.forcing.reality_defect() > 1e-13:
            raise ConfigError("the forcing must be real")
        if self.eps is not None and self.eps0 is not None and self.eps > self.eps0:
            raise ConfigError(f"eps={self.eps} exceeds the bound eps0={self.eps0}")

    @property
    def omega(self) -> np.ndarray:
        return self.lam * np.asarray(self.omega_bar)

    @property
    def truncation(self) -> tuple:
        f = self.forcing
        return f.v, f.Kphi, f.Kx

    def at(self, lam: float) -> "KdVProblem":
        return KdVProblem(self.forcing, self.omega_bar, lam, self.eps, self.eps0, self.lambda_family)

    def resized(self, Kphi: int, Kx: int) -> "KdVProblem":
        return KdVProblem(self.forcing.resize(Kphi, Kx), self.omega_bar, self.lam, self.eps,
                          self.eps0, self.lambda_family)


def forcing_from_modes(triples, v, Kphi, Kx, eps=None, norm: NormParams | None = None) -> FourierField:
    """Real forcing d_x f from (ell, k, amplitude) triples, optionally rescaled to norm eps."""
    if any(int(k) == 0 for _, k, _ in triples):
        raise ConfigError("forcing modes must have k != 0")
    f = FourierField.from_modes(triples, v, Kphi, Kx, real=True)
    if eps is not None:
        n = norm_sp(f, norm or NormParams(0.0, 0.0))
        if n == 0:
            raise ConfigError("cannot rescale a zero forcing")
        f = f * (eps / n)
    return f


def _derivs_on_grid(u: FourierField, orders, Mphi, Mx):
    return [dx(u, j).to_grid(Mphi, Mx, force_complex=not u.real) for j in orders]


def residual_F(u: FourierField, prob: KdVProblem, lam: float | None = None) -> FourierField:
    """F(u) with all nonlinear terms evaluated on one alias-free grid."""
    f = prob.forcing
    if not u.compatible(f):
        raise ConfigError("u and the forcing have different truncations")
    omega = prob.omega if lam is None else lam * np.asarray(prob.omega_bar)
    Mphi, Mx = 4 * u.Kphi + 1, 4 * u.Kx + 1
    u0, u1, u2, u3, u4, u5 = _derivs_on_grid(u, range(6), Mphi, Mx)
    nl = 10 * u0 * u3 + 20 * u1 * u2 + 30 * u0 * u0 * u1 - 6 * u2 * u5 - 18 * u3 * u4
    out = FourierField.from_grid(nl, u.v, u.Kphi, u.Kx, real=u.real)
    out = out + dphi_omega(u, omega) + dx(u, 5) - f
    return out.project_zero_mean_x()


def coeffs_a(u: FourierField) -> dict:
    """Divergence-form coefficients a2, a1, a0."""
    uxx = dx(u, 2)
    return {"a2": 1.0 - 6.0 * uxx, "a1": 10.0 * u, "a0": 10.0 * uxx + 30.0 * mul(u, u)}


def coeffs_a_star(u: FourierField) -> dict:
    """Coefficients of the expanded form sum_j a*_j d_x^j."""
    d = [dx(u, j) for j in range(6)]
    return {
        "a5": 1.0 - 6.0 * d[2],
        "a4": -18.0 * d[3],
        "a3": 10.0 * u - 18.0 * d[4],
        "a2": 20.0 * d[1] - 6.0 * d[5],
        "a1": 20.0 * d[2] + 30.0 * mul(u, u),
        "a0": 10.0 * d[3] + 60.0 * mul(u, d[1]),
    }


def coeffs_a_derivative(u: FourierField, h: FourierField) -> dict:
    """Directional derivatives d_u a_i[h]."""
    hxx = dx(h, 2)
    return {"a2": -6.0 * hxx, "a1": 10.0 * h, "a0": 10.0 * hxx + 60.0 * mul(u, h)}


@dataclass(frozen=True, eq=False)
class LinearizedOperator:
    """L(u) = omega.d_phi + d_x{d_x^2 a2 d_x^2 + d_x a1 d_x + a0}."""

    a2: FourierField
    a1: FourierField
    a0: FourierField
    omega: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def apply_G(self, h: FourierField) -> FourierField:
        """The self-adjoint part G h = d_x^2(a2 h_xx) + d_x(a1 h_x) + a0 h."""
        return dx(mul(self.a2, dx(h, 2)), 2) + dx(mul(self.a1, dx(h)), 1) + mul(self.a0, h)

    def apply_space(self, h: FourierField) -> FourierField:
        return dx(self.apply_G(h))

    def apply(self, h: FourierField) -> FourierField:
        return dphi_omega(h, self.omega) + self.apply_space(h)

    __call__ = apply

    def space_operator(self, include_zero: bool = False) -> VarCoeffOperator:
        """The non-transport part d_x G as a matrix with phi-dependent entries."""
        key = ("op", include_zero)
        if key not in self._cache:
            v, K, Kx = self.a2.v, self.a2.Kphi, self.a2.Kx
            D = lambda n: VarCoeffOperator.derivative(n, v, K, Kx, include_zero)
            M = lambda g: from_multiplier(g, include_zero)
            G = (D(2) @ M(self.a2) @ D(2)) + (D(1) @ M(self.a1) @ D(1)) + M(self.a0)
            op = D(1) @ G
            self._cache[key] = op.like(op.blocks, hamiltonian=True)
        return self._cache[key]


def build_L(u: FourierField, omega) -> LinearizedOperator:
    a = coeffs_a(u)
    return LinearizedOperator(a["a2"], a["a1"], a["a0"], tuple(float(w) for w in omega))
