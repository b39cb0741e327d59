"""Conjugation of the linearized operator to constant leading coefficient.

Two changes of variables are applied in turn.  The space diffeomorphism
A h = (1 + beta_x) h(phi, x + beta) flattens the x-dependence of the top
coefficient, then the time reparametrization B h = h(phi + omega alpha(phi), y)
removes its phi-dependence.  The outcome is

    L(u) A B = A B xi Lreg,    Lreg = omega.d_theta + m d_y^5 + d_y{d_y[c1 d_y] + c0}

with a positive torus function xi(theta) and a real constant m.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .composition import SpaceDiffeo, TimeShift, apply_A, apply_B, compose
from .decay_ops import VarCoeffOperator, from_multiplier
from .errors import DomainError, NumericalError
from .linearized import build_L, coeffs_a
from .spectral_core import (
    FourierField,
    NormParams,
    dphi_omega,
    dx,
    dx_inv,
    mul,
    omega_dphi_inv,
    product_grid,
)

__all__ = [
    "K1",
    "K2",
    "FLATNESS_TOL",
    "loss_parameters",
    "space_step",
    "time_step",
    "assemble",
    "RegularizedOperator",
    "conjugation_oracle",
    "oracle_basis",
]

K1 = 99.0 / 101.0
K2 = 10000.0 / 10201.0
FLATNESS_TOL = 1e-9


def loss_parameters(s0: float, tau0: float) -> dict:
    """Regularity index p and derivative loss eta used by the coefficient bounds."""
    return {"p": 2 * s0 + 5, "eta": 4 * s0 + tau0 + 9}


def _phi_column(vals: np.ndarray, like: FourierField) -> FourierField:
    """x-independent field from torus grid values of shape (M,)*v."""
    Mx = 2 * like.Kx + 1
    g = np.broadcast_to(vals[..., None], vals.shape + (Mx,))
    f = FourierField.from_grid(g, like.v, like.Kphi, like.Kx, real=not np.iscomplexobj(vals))
    c = np.zeros_like(f.coeffs)
    c[:, f.Kx] = f.coeffs[:, f.Kx]
    return f.with_coeffs(c)


def _grid_field(vals, like: FourierField) -> FourierField:
    return FourierField.from_grid(vals, like.v, like.Kphi, like.Kx, real=not np.iscomplexobj(vals))


def space_step(u: FourierField, omega, smallness: float = 0.01) -> dict:
    """Flatten the top coefficient in x.

    Returns b (phi only), the displacement beta, the diffeomorphism and the new
    coefficients b2 = 1 + b, b1, b0 already moved to the y variable.
    """
    v, K, Kx = u.v, u.Kphi, u.Kx
    a = coeffs_a(u)
    M, Mx = 4 * K + 1, 4 * Kx + 1
    one_plus_a = a["a2"].to_grid(M, Mx)
    if np.min(one_plus_a) <= 0:
        raise DomainError("1 + a must be positive for the fifth root")
    root = np.exp(-np.log(one_plus_a) / 5.0)  # (1+a)^(-1/5)
    avg = root.mean(axis=-1)
    one_plus_b = avg ** -5.0
    b = _phi_column(one_plus_b - 1.0, u)
    p0 = _grid_field((one_plus_b ** 0.2)[..., None] * root - 1.0, u).project_zero_mean_x()
    beta = dx_inv(p0)
    diffeo = SpaceDiffeo(beta, smallness=smallness, check=NormParams(0.0, 0))

    def g(f):
        return f.to_grid(M, Mx)

    bx = [g(dx(beta, j)) if j else None for j in range(6)]
    J = 1.0 + bx[1]
    a2, a1, a0 = g(a["a2"]), g(a["a1"]), g(a["a0"])
    a2x, a2xx = g(dx(a["a2"])), g(dx(a["a2"], 2))
    a1x = g(dx(a["a1"]))
    bt = g(dphi_omega(beta, omega))
    t2 = a2 * J ** 5
    t1 = J ** 2 * (a1 * J + 5 * a2 * bx[3] + 3 * a2x * bx[2])
    t0 = (a0 * J + a1 * bx[3] + a2 * bx[5] + a1x * bx[2] + 2 * a2x * bx[4]
          + a2xx * bx[3] + bt)
    b2_tilde, b1_tilde, b0_tilde = (_grid_field(t, u) for t in (t2, t1, t0))
    b2 = compose(b2_tilde, diffeo, inverse=True)
    flat = float(np.max(np.abs(b2.to_grid() - (1.0 + b).to_grid()), initial=0.0))
    if flat > FLATNESS_TOL:
        raise NumericalError(f"top coefficient is not flat after the space step ({flat:.2e})")
    return {
        "b": b,
        "beta": beta,
        "diffeo": diffeo,
        "b2": b2,
        "b1": compose(b1_tilde, diffeo, inverse=True),
        "b0": compose(b0_tilde, diffeo, inverse=True),
        "flatness": flat,
    }


def time_step(b: FourierField, b1: FourierField, b0: FourierField, omega,
              alpha0: float | None = None, tau0: float = 0.0, smallness: float = 0.01) -> dict:
    """Remove the phi-dependence of the top coefficient by reparametrizing time."""
    if not b.phi_only:
        raise DomainError("b must depend on phi only")
    zero = b.modes.zero
    m = float(1.0 + b.coeffs[zero, b.Kx].real)
    dev = b - float(b.coeffs[zero, b.Kx].real)
    alpha = omega_dphi_inv(dev, omega, alpha0=alpha0, tau0=tau0, tol=1e-14) / m
    alpha = alpha.with_coeffs(alpha.coeffs, real=True)
    shift = TimeShift(alpha, omega, smallness=smallness)
    xi = apply_B(shift, 1.0 + dphi_omega(alpha, omega), inverse=True)
    Mphi, Mx = product_grid(b.Kphi), product_grid(b.Kx)
    xi_grid = xi.to_grid(Mphi, Mx)
    if np.min(xi_grid) <= 0:
        raise DomainError("xi must be positive")

    def over_xi(f):
        return FourierField.from_grid(apply_B(shift, f, inverse=True).to_grid(Mphi, Mx) / xi_grid,
                                      f.v, f.Kphi, f.Kx, real=True)

    return {"m": m, "alpha": alpha, "shift": shift, "xi": xi, "c1": over_xi(b1), "c0": over_xi(b0)}


@dataclass(frozen=True, eq=False)
class RegularizedOperator:
    """Lreg = omega.d_theta + m d^5 + d{d c1 d + c0} with its conjugating maps."""

    m: float
    c1: FourierField
    c0: FourierField
    xi: FourierField
    b: FourierField
    b1: FourierField
    b0: FourierField
    diffeo: SpaceDiffeo
    shift: TimeShift
    omega: tuple
    flatness: float = 0.0
    width: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def beta(self) -> FourierField:
        return self.diffeo.beta

    @property
    def alpha(self) -> FourierField:
        return self.shift.alpha

    @property
    def widths(self) -> dict:
        """Analyticity widths of the coefficients and of the maps, if a width was given."""
        if self.width is None:
            return {}
        return {"s": self.width, "coefficients": K1 * self.width, "maps": K2 * self.width}

    # -- the conjugating maps --------------------------------------------
    def U2(self, h: FourierField) -> FourierField:
        """A B h."""
        return apply_A(self.diffeo, apply_B(self.shift, h))

    def U2_inv(self, h: FourierField) -> FourierField:
        return apply_B(self.shift, apply_A(self.diffeo, h, inverse=True), inverse=True)

    def U1(self, h: FourierField) -> FourierField:
        """A B (xi h)."""
        return self.U2(self._xi_mul(h))

    def U1_inv(self, h: FourierField) -> FourierField:
        return self._xi_div(self.U2_inv(h))

    def _xi_grid(self, h):
        M, Mx = product_grid(h.Kphi), product_grid(h.Kx)
        return self.xi.to_grid(M, Mx), M, Mx

    def _xi_mul(self, h):
        return mul(self.xi, h) if h.real else mul(self.xi.with_coeffs(self.xi.coeffs, real=False), h)

    def _xi_div(self, h):
        g, M, Mx = self._xi_grid(h)
        vals = h.to_grid(M, Mx, force_complex=not h.real) / g
        return FourierField.from_grid(vals, h.v, h.Kphi, h.Kx, real=h.real)

    # -- the regularized operator ---------------------------------------
    def apply_space(self, h: FourierField) -> FourierField:
        """m d^5 h + d(d(c1 h_y) + c0 h)."""
        return self.m * dx(h, 5) + dx(dx(mul(self.c1, dx(h))) + mul(self.c0, h))

    def apply(self, h: FourierField) -> FourierField:
        return dphi_omega(h, self.omega) + self.apply_space(h)

    __call__ = apply

    def apply_xi_L(self, h: FourierField) -> FourierField:
        return self._xi_mul(self.apply(h))

    def remainder_operator(self, include_zero: bool = False) -> VarCoeffOperator:
        """The bounded-order part d{d c1 d + c0} as a matrix with theta-dependent entries."""
        key = ("R0", include_zero)
        if key not in self._cache:
            v, K, Kx = self.c1.v, self.c1.Kphi, self.c1.Kx
            D = lambda n: VarCoeffOperator.derivative(n, v, K, Kx, include_zero)
            M = lambda g: from_multiplier(g, include_zero)
            op = D(1) @ ((D(1) @ M(self.c1) @ D(1)) + M(self.c0))
            self._cache[key] = op.like(op.blocks, hamiltonian=True)
        return self._cache[key]

    def leading_diagonal(self) -> np.ndarray:
        """d_k = m k^5 over the nonzero space modes."""
        ks = np.concatenate([np.arange(-self.c1.Kx, 0), np.arange(1, self.c1.Kx + 1)])
        return self.m * ks.astype(float) ** 5

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "omega": list(self.omega),
            "flatness": self.flatness,
            "c0": self.c0.to_json_dict(),
            "c1": self.c1.to_json_dict(),
            "xi": self.xi.to_json_dict(),
            "alpha": self.alpha.to_json_dict(),
            "beta": self.beta.to_json_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def assemble(u: FourierField, omega, alpha0: float | None = None, tau0: float = 0.0,
             smallness: float = 0.01) -> RegularizedOperator:
    """Run both steps at u and package the result."""
    omega = tuple(float(w) for w in omega)
    sp = space_step(u, omega, smallness=smallness)
    ts = time_step(sp["b"], sp["b1"], sp["b0"], omega, alpha0=alpha0, tau0=tau0, smallness=smallness)
    return RegularizedOperator(
        m=ts["m"], c1=ts["c1"], c0=ts["c0"], xi=ts["xi"], b=sp["b"], b1=sp["b1"], b0=sp["b0"],
        diffeo=sp["diffeo"], shift=ts["shift"], omega=omega, flatness=sp["flatness"],
        width=u.width,
    )


def oracle_basis(v: int, Kphi: int, Kx: int, ell_max: int, k_max: int) -> list:
    """Real unit test fields cos/sin(ell.phi + k x) for |ell| <= ell_max, 1 <= k <= k_max."""
    out = []
    for ell in FourierField.zeros(v, Kphi, Kx).modes.ells:
        if np.abs(ell).sum() > ell_max:
            continue
        for k in range(1, k_max + 1):
            out.append(FourierField.from_modes([(tuple(ell), k, 0.5)], v, Kphi, Kx))
    return out


def conjugation_oracle(u: FourierField, reg: RegularizedOperator, basis: str | list = "interior",
                       ell_max: int | None = None, k_max: int | None = None) -> float:
    """Largest relative defect |U1(xi Lreg)h - L U2 h| / |L U2 h| over a set of test fields.

    ``basis='interior'`` uses low modes whose images stay well inside the
    truncation; ``'full'`` uses every retained mode, so truncation tails show up.
    A list of fields may be passed instead.
    """
    L = build_L(u, reg.omega)
    if isinstance(basis, str):
        if basis == "interior":
            ell_max = max(u.Kphi // 4, 1) if ell_max is None else ell_max
            k_max = max(u.Kx // 3, 1) if k_max is None else k_max
        elif basis == "full":
            ell_max, k_max = u.Kphi, u.Kx
        else:
            raise ValueError(f"unknown basis {basis!r}")
        fields = oracle_basis(u.v, u.Kphi, u.Kx, ell_max, k_max)
    else:
        fields = list(basis)
    worst = 0.0
    for h in fields:
        lhs = reg.U1(reg.apply(h))
        rhs = L(reg.U2(h))
        scale = rhs.l2()
        if scale == 0:
            continue
        worst = max(worst, (lhs - rhs).l2() / scale)
    return worst
