"""Quick property checks behind ``qpkdv check``.

Each check returns (name, passed, detail).  Truncations are kept small so the
whole suite runs in a few seconds.
"""
from __future__ import annotations

import numpy as np

from .composition import SpaceDiffeo, apply_A
from .decay_ops import VarCoeffOperator, decay_norm, from_multiplier
from .kam_reduce import (DiagonalModel, ReductionState, homological_residual, kuksin_matrix,
                         kuksin_solve, reduce_step)
from .spectral_core import FourierField, NormParams, mul, norm_frak, norm_max, norm_sp, symplectic_form

__all__ = ["run_suite", "SUITES"]


def _band(u: FourierField, lmax: int, kmax: int) -> FourierField:
    c = u.coeffs.copy()
    c[u.modes.l1 > lmax] = 0
    c[:, np.abs(u.ks) > kmax] = 0
    return u.with_coeffs(c)


def check_sandwich(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        u = FourierField.random(rng, 2, 4, 6, decay=0.5)
        s, p = rng.uniform(0, 0.3), int(rng.integers(0, 4))
        lo = norm_frak(u, NormParams(s, p))
        mid = norm_sp(u, NormParams(s, 2 * p))
        hi = 4 ** p * norm_frak(u, NormParams(s, 2 * p))
        worst = max(worst, (lo - mid) / mid, (mid - hi) / hi)
    return "norm sandwich", worst <= 1e-12, f"worst relative violation {worst:.2e}"


def check_algebra(rng, trials=30):
    ratios = []
    for _ in range(trials):
        u = FourierField.random(rng, 2, 4, 6, decay=0.5)
        w = FourierField.random(rng, 2, 4, 6, decay=0.5)
        npar = NormParams(0.1, 2)
        ratios.append(norm_sp(mul(u, w), npar) / (norm_sp(u, npar) * norm_sp(w, npar)))
    r = np.array(ratios)
    return "product bound", bool(r.max() / r.min() <= 2), f"C in [{r.min():.3f}, {r.max():.3f}]"


def check_roundtrip(rng, trials=3):
    worst, sym = 0.0, 0.0
    for _ in range(trials):
        beta = _band(FourierField.random(rng, 2, 8, 16, decay=0.5), 1, 2)
        beta = beta * (0.008 / norm_max(beta, NormParams(0.0, 1)))
        d = SpaceDiffeo(beta)
        h = _band(FourierField.random(rng, 2, 8, 16), 2, 5)
        g = _band(FourierField.random(rng, 2, 8, 16), 2, 5)
        back = apply_A(d, apply_A(d, h), inverse=True)
        worst = max(worst, float(np.max(np.abs((back - h).to_grid()))))
        s0 = symplectic_form(h, g)
        s1 = symplectic_form(apply_A(d, h), apply_A(d, g))
        sym = max(sym, float(np.max(np.abs(s1 - s0))) / max(float(np.max(np.abs(s0))), 1e-300))
    return "diffeomorphism round trip", worst <= 1e-10 and sym <= 1e-10, \
        f"sup error {worst:.2e}, symplectic defect {sym:.2e}"


def check_kuksin(rng, trials=10):
    v, K = 2, 4
    worst = 0.0
    from .spectral_core import torus_modes
    tm = torus_modes(v, K)
    omega = np.array([1.0, (1 + 5 ** 0.5) / 2])
    for _ in range(trials):
        d = rng.uniform(5, 50)
        mu = (rng.standard_normal(tm.n) + 1j * rng.standard_normal(tm.n)) * np.exp(-tm.l1)
        mu[tm.zero] = 0
        mu = 0.5 * (mu + np.conj(mu[tm.neg]))
        mu *= 0.1 * d / np.abs(mu).sum()
        p = rng.standard_normal(tm.n) + 1j * rng.standard_normal(tm.n)
        x = kuksin_solve(d, mu, p, omega, v, K)
        A = kuksin_matrix(d, mu, omega, v, K)
        worst = max(worst, np.linalg.norm(A @ x - p) / np.linalg.norm(p))
    return "Kuksin solve residual", bool(worst <= 1e-10), f"worst relative residual {worst:.2e}"


def check_reduction(rng):
    v, K, Kx = 1, 4, 4
    omega = (1.3,)
    c1 = FourierField.random(rng, v, K, Kx, decay=0.8, zero_mean_x=False)
    Dd = lambda n: VarCoeffOperator.derivative(n, v, K, Kx)
    R = Dd(1) @ (Dd(1) @ from_multiplier(c1) @ Dd(1))
    R = R.like(R.blocks, hamiltonian=True)
    npar = NormParams(0.0, 0.0)
    R = R * (1e-3 / decay_norm(R, "varsigma", npar))
    st = ReductionState(DiagonalModel.unperturbed(1.0, v, K, Kx), R, omega)
    st2 = reduce_step(st)
    res = homological_residual(st.D, st2.transforms[-1][0], st.R, omega)
    rel = decay_norm(res, "varsigma", npar) / 1e-3
    after = st2.history[-1]["remainder_after"]
    return "reduction step", rel <= 1e-9 and after < 1e-3 ** 1.2, \
        f"homological residual {rel:.2e}, remainder 1e-3 -> {after:.2e}"


SUITES = {
    "norms": (check_sandwich, check_algebra),
    "composition": (check_roundtrip,),
    "reduction": (check_kuksin, check_reduction),
}


def run_suite(name: str = "all", seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    names = list(SUITES) if name == "all" else [name]
    out = []
    for n in names:
        for fn in SUITES[n]:
            out.append(fn(rng))
    return out
