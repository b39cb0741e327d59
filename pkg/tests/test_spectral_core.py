import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import GOLDEN
from qpkdv.errors import ConfigError, DomainError, SmallDivisorError
from qpkdv.spectral_core import (FourierField, LambdaFamily, NormParams, dphi_omega, dx, dx_inv, lip_norm, mul,
                                 norm_frak, norm_joint, norm_max, norm_sp, omega_dphi_inv, symplectic_form,
                                 torus_modes)


def single(ell, k, v=2, K=4, Kx=6, amp=1.0):
    return FourierField.from_modes([(ell, k, amp)], v, K, Kx, real=False)


def direct_norm(u, s, p, kind):
    """Mode-by-mode summation in plain Python floats."""
    total = 0.0
    for a, ell in enumerate(u.modes.ells):
        L = int(np.abs(ell).sum())
        for b, k in enumerate(range(-u.Kx, u.Kx + 1)):
            z = complex(u.coeffs[a, b])
            if z == 0:
                continue
            bl, bk = max(L, 1), max(abs(k), 1)
            poly = (bl + bk) ** (2 * p) if kind == "sp" else (bl * bk) ** (2 * p)
            total += abs(z) ** 2 * math.exp(2 * (L + abs(k)) * s) * poly
    return math.sqrt(total)


fields = st.builds(
    lambda seed, decay: FourierField.random(np.random.default_rng(seed), 2, 4, 6, decay=decay),
    st.integers(0, 2 ** 32 - 1), st.floats(0.1, 1.0))


# ---------------------------------------------------------------------------
# norms


def test_norm_sp_constant_field():
    one = FourierField.constant(1.0, 2, 4, 6)
    assert norm_sp(one, NormParams(0.37, 2)) == pytest.approx(4.0, rel=1e-15)
    assert norm_frak(one, NormParams(0.37, 2)) == pytest.approx(1.0, rel=1e-15)


def test_norm_of_single_space_mode():
    assert norm_sp(single((0, 0), 1), NormParams(0.0, 0)) == pytest.approx(1.0)
    assert norm_max(single((0, 0), 1), NormParams(0.0, 0)) == pytest.approx(1.0)


def test_norm_frak_single_torus_mode():
    u = single((2, -1), 0)
    assert norm_frak(u, NormParams(0.1, 1)) == pytest.approx(math.exp(0.3) * 3, rel=1e-14)


def test_norms_match_direct_sum(rng):
    u = FourierField.zeros(2, 4, 6, real=False)
    c = u.coeffs.copy()
    tm = u.modes
    for _ in range(5):
        c[rng.integers(tm.n), rng.integers(13)] = rng.standard_normal() + 1j * rng.standard_normal()
    u = u.with_coeffs(c)
    for s, p in [(0.0, 0.0), (0.13, 1.5), (0.3, 3.0)]:
        assert norm_sp(u, NormParams(s, p)) == pytest.approx(direct_norm(u, s, p, "sp"), rel=1e-12)
        assert norm_frak(u, NormParams(s, p)) == pytest.approx(direct_norm(u, s, p, "frak"), rel=1e-12)


@given(fields, st.floats(0, 0.3), st.floats(0, 4))
def test_sandwich_lower_bound_and_4p_upper_bound(u, s, p):
    lo = norm_frak(u, NormParams(s, p))
    mid = norm_sp(u, NormParams(s, 2 * p))
    assert lo <= mid * (1 + 1e-12)
    assert mid <= 4 ** p * norm_frak(u, NormParams(s, 2 * p)) * (1 + 1e-12)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_sandwich_2p_constant_fails_on_lowest_mode(p):
    # ([1] + [1])^{4p} = 16^p against [1]^{4p}: the ratio of norms is 4^p, not 2^p
    u = single((1, 0), 1)
    ratio = norm_sp(u, NormParams(0.0, 2 * p)) / norm_frak(u, NormParams(0.0, 2 * p))
    assert ratio == pytest.approx(4 ** p)
    assert ratio > 2 ** p


@given(fields, st.floats(0.05, 0.3), st.floats(0.01, 0.04), st.floats(0.5, 3))
def test_smoothing_estimate(u, s, sigma, nu):
    lhs = norm_joint(u, NormParams(s - sigma, 1 + nu))
    rhs = (nu / math.e) ** nu * sigma ** (-nu) * norm_joint(u, NormParams(s, 1))
    assert lhs <= rhs * (1 + 1e-12)


def test_norm_max_strip_and_derivatives():
    u = single((0, 0), 1)
    assert norm_max(u, NormParams(0.2, 1)) == pytest.approx(2 * math.exp(0.2), rel=1e-12)
    assert norm_max(FourierField.zeros(2, 4, 6), NormParams(0.2, 2)) == 0.0


@given(fields, st.floats(0, 0.2))
def test_sup_bounded_by_weighted_norm(u, s):
    # Cauchy-Schwarz: sup |u| on the strip <= ||u||_{s,p} (sum ([l]+[k])^{-2p})^{1/2}
    p = 2
    tm = u.modes
    w = (np.maximum(tm.l1, 1)[:, None] + np.maximum(np.abs(u.ks), 1)[None, :]) ** (-2.0 * p)
    bound = norm_sp(u, NormParams(s, p)) * math.sqrt(w.sum())
    assert norm_max(u, NormParams(s, 0)) <= bound * (1 + 1e-12)


def test_norm_max_needs_integer_p():
    with pytest.raises(ConfigError):
        norm_max(single((0, 0), 1), NormParams(0.0, 0.5))


# ---------------------------------------------------------------------------
# Lipschitz norms


def test_lip_norm_constant_family(rng):
    u = FourierField.random(rng, 2, 4, 6)
    fam = LambdaFamily.equispaced(lambda lam: u, GOLDEN)
    f = lambda x: norm_sp(x, NormParams(0.1, 1))
    assert lip_norm(fam, f) == pytest.approx(f(u))


def test_lip_norm_linear_family():
    u0 = single((0, 0), 1)
    fam = LambdaFamily(((0.5, 0.5 * u0), (1.5, 1.5 * u0)), GOLDEN)
    assert lip_norm(fam, lambda x: norm_sp(x, NormParams(0.0, 0))) == pytest.approx(2.5)


def test_lip_norm_affine_family_matches_pairs(rng):
    a, b = FourierField.random(rng, 2, 4, 6), FourierField.random(rng, 2, 4, 6)
    lams = [0.5, 0.8, 1.1, 1.5]
    fam = LambdaFamily(tuple((lam, a + lam * b) for lam in lams), GOLDEN)
    f = lambda x: norm_sp(x, NormParams(0.05, 1))
    sup = max(f(a + lam * b) for lam in lams)
    lip = max(f((a + l1 * b) - (a + l2 * b)) / abs(l1 - l2) for l1 in lams for l2 in lams if l1 != l2)
    assert lip_norm(fam, f) == pytest.approx(sup + lip, rel=1e-12)


def test_lip_norm_needs_two_samples():
    fam = LambdaFamily(((1.0, single((0, 0), 1)),), GOLDEN)
    with pytest.raises(ConfigError):
        lip_norm(fam, lambda x: 0.0)


def test_lambda_outside_parameter_interval():
    with pytest.raises(ConfigError):
        LambdaFamily(((2.0, None), (1.0, None)), GOLDEN)


# ---------------------------------------------------------------------------
# products and calculus


def test_mul_simple_products(rng):
    one = mul(single((0, 0), 1), single((0, 0), -1))
    assert one.coefficient((0, 0), 0) == pytest.approx(1.0)
    assert one.l2() == pytest.approx(1.0)
    u = FourierField.random(rng, 2, 4, 6)
    assert mul(u, FourierField.zeros(2, 4, 6)).l2() == 0.0


def test_mul_matches_dense_convolution(rng):
    v, K, Kx = 1, 3, 4
    u = FourierField.random(rng, v, K, Kx, real=False, zero_mean_x=False)
    w = FourierField.random(rng, v, K, Kx, real=False, zero_mean_x=False)
    ref = np.zeros_like(u.coeffs)
    for l1 in range(-K, K + 1):
        for k1 in range(-Kx, Kx + 1):
            for l2 in range(-K, K + 1):
                for k2 in range(-Kx, Kx + 1):
                    l, k = l1 + l2, k1 + k2
                    if abs(l) <= K and abs(k) <= Kx:
                        ref[u.modes.index[(l,)], k + Kx] += (u.coefficient((l1,), k1) * w.coefficient((l2,), k2))
    assert np.max(np.abs(mul(u, w).coeffs - ref)) < 1e-12 * np.max(np.abs(ref))


@given(fields, fields)
def test_mul_commutes_and_keeps_reality(u, w):
    uw, wu = mul(u, w), mul(w, u)
    assert np.max(np.abs(uw.coeffs - wu.coeffs)) < 1e-12 * (1 + uw.max_abs_coeff())
    assert uw.real
    assert uw.reality_defect() < 1e-13


def test_dx_of_exponential():
    u = dx(single((1, 0), 3), 1)
    assert u.coefficient((1, 0), 3) == pytest.approx(3j)


def test_dphi_omega_of_constant_vanishes():
    assert dphi_omega(FourierField.constant(2.0, 2, 4, 6), GOLDEN).l2() == 0.0


@given(fields)
def test_dx_inverts_dx_inv(u):
    back = dx(dx_inv(u), 1)
    assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-14 * (1 + u.max_abs_coeff())
    assert dx_inv(u).zero_mean_x


def test_dx_inv_of_sine():
    sin_x = FourierField.from_modes([((0, 0), 1, -0.5j)], 2, 4, 6)
    cos_x = FourierField.from_modes([((0, 0), 1, 0.5)], 2, 4, 6)
    assert np.allclose(dx_inv(sin_x).coeffs, (-cos_x).coeffs, atol=1e-15)


def test_dx_inv_rejects_average():
    with pytest.raises(DomainError):
        dx_inv(FourierField.constant(1.0, 2, 4, 6))


def test_omega_dphi_inv_single_mode():
    omega = 1.1 * GOLDEN
    u = omega_dphi_inv(single((2, -1), 0), omega)
    assert u.coefficient((2, -1), 0) == pytest.approx(1 / (1j * (2 * omega[0] - omega[1])))


@given(st.builds(lambda seed: FourierField.random(np.random.default_rng(seed), 2, 4, 6, zero_mean_x=False),
                 st.integers(0, 2 ** 32 - 1)))
def test_omega_dphi_inv_right_inverse(u):
    c = u.coeffs.copy()
    c[u.modes.zero] = 0
    u = u.with_coeffs(c)
    back = dphi_omega(omega_dphi_inv(u, GOLDEN), GOLDEN)
    assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-12 * (1 + u.max_abs_coeff())


def test_omega_dphi_inv_average():
    one = FourierField.constant(1.0, 2, 4, 6)
    with pytest.raises(DomainError):
        omega_dphi_inv(one, GOLDEN)
    # with the average explicitly discarded the constant goes to zero
    assert omega_dphi_inv(one, GOLDEN, tol=np.inf).l2() == 0.0


def test_omega_dphi_inv_small_divisor():
    # the brute-force minimiser of |omega.ell| over the ball
    K = 4
    tm = torus_modes(2, K)
    vals = np.abs(tm.dot(GOLDEN))
    vals[tm.zero] = np.inf
    a = int(np.argmin(vals))
    u = FourierField.from_modes([(tuple(tm.ells[a]), 1, 1.0)], 2, K, 6)
    with pytest.raises(SmallDivisorError) as err:
        omega_dphi_inv(u, GOLDEN, alpha0=1.01 * vals[a] * max(tm.l1[a], 1) ** 1.2, tau0=1.2)
    assert set(np.abs(err.value.ell)) == set(np.abs(tm.ells[a]))


# ---------------------------------------------------------------------------
# structure, symplectic form and serialization


def test_reality_flag_roundtrips_through_grid(rng):
    u = FourierField.random(rng, 2, 4, 6)
    g = u.to_grid()
    assert not np.iscomplexobj(g)
    back = FourierField.from_grid(g, 2, 4, 6)
    assert back.real and np.allclose(back.coeffs, u.coeffs, atol=1e-14)


def test_symplectic_form_quadrature(rng):
    u = FourierField.random(rng, 1, 2, 5)
    w = FourierField.random(rng, 1, 2, 5)
    # trapezoid rule on a fine grid for (1/2pi) int (d_x^{-1} u) w dx at phi = 0
    x = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    U, W = dx_inv(u), w
    ev = lambda f: np.real(sum(f.coefficient((l,), k) * np.exp(1j * k * x)
                               for l in range(-2, 3) for k in range(-5, 6)))
    ref = np.mean(ev(U) * ev(W))
    assert symplectic_form(u, w)[0] == pytest.approx(ref, abs=1e-13)


@given(fields, fields)
def test_symplectic_form_antisymmetric(u, w):
    a, b = symplectic_form(u, w), symplectic_form(w, u)
    assert np.max(np.abs(a + b)) < 1e-13 * (1 + np.max(np.abs(a)))


def test_json_and_binary_roundtrip(rng):
    u = FourierField.random(rng, 2, 4, 6)
    d = json.loads(u.to_json())
    assert set(d) == {"v", "Kphi", "Kx", "real_flag", "coeffs"}
    back = FourierField.from_json(u.to_json())
    assert np.array_equal(back.coeffs, u.coeffs) and back.real
    bb = FourierField.from_bytes(u.to_bytes())
    assert bb.coeffs.tobytes() == u.coeffs.tobytes()


def test_json_rejects_mode_outside_truncation():
    with pytest.raises(ConfigError):
        FourierField.from_json_dict({"v": 1, "Kphi": 1, "Kx": 1, "coeffs": [[3, 0, 1.0, 0.0]]})


def test_negative_width_rejected():
    with pytest.raises(ConfigError):
        NormParams(-0.1, 1)
