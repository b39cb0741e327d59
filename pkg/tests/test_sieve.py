import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import GOLDEN
from qpkdv.errors import ConfigError
from qpkdv.kam_reduce import DiagonalModel
from qpkdv.sieve import (alpha_schedule, diophantine_check, ell_ball, golden_frequency, measure_estimate,
                         melnikov_first, melnikov_second, second_pairs)

G = GOLDEN[1]
# lambda * (2 - 2g) + 1 = 0: the first condition at k = 1, ell = (2, -2) is exactly resonant
LAM_RES = 1 / (2 * G - 2)


def loop_excluded(lambdas, alpha_first, alpha_second, tau, L, Kx):
    """Plain loops over every triple, no resonance ball."""
    ks = [k for k in range(-Kx, Kx + 1) if k]
    ells = [(a, b) for a in range(-L, L + 1) for b in range(-L, L + 1) if abs(a) + abs(b) <= L]
    out = []
    for lam in lambdas:
        bad = False
        for ell in ells:
            dot = lam * (ell[0] * GOLDEN[0] + ell[1] * GOLDEN[1])
            br = max(abs(ell[0]) + abs(ell[1]), 1) ** tau
            for i in ks:
                if abs(dot + i ** 5) < alpha_first * abs(i) ** 5 / br:
                    bad = True
                for j in ks:
                    if i != j and abs(dot + i ** 5 - j ** 5) < alpha_second * abs(i ** 5 - j ** 5) / br:
                        bad = True
        out.append(bad)
    return np.array(out)


def test_ell_ball():
    for L in range(5):
        assert len(ell_ball(2, L)) == 2 * L * L + 2 * L + 1
    assert not np.any(np.all(ell_ball(3, 2, include_zero=False) == 0, axis=1))
    assert np.abs(ell_ball(3, 3)).sum(axis=1).max() == 3


def test_schedule_and_frequency():
    assert alpha_schedule(1.0, 1, 1) == 1.0
    assert alpha_schedule(0.8, 2, 3) == pytest.approx(0.2 * 1.5)
    assert np.allclose(golden_frequency(3), [1, G, G * G])


def test_diophantine_golden():
    res = diophantine_check(GOLDEN, 1.0, 1.2, 100)
    assert res and res.worst_ell == (1, 0) and res.worst_value == pytest.approx(1.0)
    assert not diophantine_check(GOLDEN, 1.01, 1.2, 100)


def test_diophantine_rational_direction_fails():
    res = diophantine_check((1.0, 0.5), 1e-6, 1.0, 10)
    assert not res and res.worst_ell == (1, -2) and res.worst_value == 0.0
    assert diophantine_check((1.0, 0.5), 1.0, 1.0, 0)


def test_engineered_first_resonance():
    res = melnikov_first(LAM_RES, None, 1e-6, 2.0, 6, GOLDEN, Kx=4)
    assert not res
    w = res.worst
    assert (w.i, w.ell) in {(1, (2, -2)), (-1, (-2, 2))}
    assert abs(w.value) < 1e-12
    assert melnikov_first(LAM_RES + 0.01, None, 1e-6, 2.0, 6, GOLDEN, Kx=4)


def test_second_condition_uses_differences():
    # lambda g = 2 = d_1 - d_-1 makes (i, j) = (-1, 1), ell = (0, 1) resonant
    lam = 2 / G
    res = melnikov_second(lam, None, 1e-6, 2.0, 4, GOLDEN, Kx=3)
    assert not res
    assert {(r.i, r.j, r.ell) for r in res.records if abs(r.value) < 1e-12} == {(-1, 1, (0, 1)), (1, -1, (0, -1))}


@pytest.mark.parametrize("lam", np.linspace(0.5, 1.5, 23))
def test_resonance_ball_is_sound(lam):
    kw = dict(D=None, alpha=0.05, tau=2.0, L=6, omega_bar=GOLDEN, Kx=6)
    a = melnikov_second(lam, restrict=True, **kw)
    b = melnikov_second(lam, restrict=False, **kw)
    assert [r.as_row() for r in a.records] == [r.as_row() for r in b.records]


def test_second_pairs_ball():
    k = np.array([-3, -2, -1, 1, 2, 3])
    A, B = second_pairs(k, 1, 1.0)
    assert np.all(k[A] ** 4 + k[B] ** 4 <= 16) and np.all(A != B)
    A2, _ = second_pairs(k, 1, 1.0, restrict=False)
    assert len(A2) == 30


def test_diagonal_model_table():
    D = DiagonalModel.unperturbed(1.0, 2, 2, 3)
    lam = 0.93
    a = melnikov_first(lam, D, 1e-3, 2.0, 4, GOLDEN)
    b = melnikov_first(lam, None, 1e-3, 2.0, 4, GOLDEN, Kx=3)
    c = melnikov_first(lam, D.d, 1e-3, 2.0, 4, GOLDEN)
    assert a.passed == b.passed == c.passed and len(a.records) == len(b.records) == len(c.records)
    with pytest.raises(ConfigError):
        melnikov_first(lam, None, 1e-3, 2.0, 4, GOLDEN)


def test_measure_matches_loop_oracle():
    lambdas = np.linspace(0.5, 1.5, 201)
    alpha0, tau, L, Kx = 0.02, 2.0, 4, 3
    rep = measure_estimate(GOLDEN, lambdas, alpha0, tau, L, Kx=Kx, n_steps=2)
    a1 = max(alpha_schedule(alpha0, n, n) for n in (1, 2))
    a2 = max(alpha_schedule(alpha0, m, n) for n in (1, 2) for m in range(1, n + 1))
    want = loop_excluded(lambdas, a1, a2, tau, L, Kx)
    assert np.array_equal(rep.excluded, want)
    assert rep.fraction == want.mean()


def test_measure_width_bound_and_outputs():
    lambdas = np.linspace(0.5, 1.5, 4001)
    rep = measure_estimate(GOLDEN, lambdas, 0.005, 2.0, 6, Kx=4)
    assert 0 < rep.fraction < 1 and rep.max_width_ratio <= 1.0
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["lambda", "pass", "worst"] and len(rows) == len(lambdas) + 1
    summ = json.loads(rep.to_json())
    assert summ["grid_points"] == 4001 and summ["excluded_fraction"] == rep.fraction
    assert all(i.interval[0] <= i.interval[1] for i in rep.intervals)


@given(st.floats(1e-4, 0.02), st.floats(0.2, 0.9))
def test_measure_monotone_in_alpha(alpha0, shrink):
    lambdas = np.linspace(0.5, 1.5, 501)
    big = measure_estimate(GOLDEN, lambdas, alpha0, 2.0, 4, Kx=3)
    small = measure_estimate(GOLDEN, lambdas, alpha0 * shrink, 2.0, 4, Kx=3)
    assert np.all(small.excluded <= big.excluded)


def test_measure_rejects_bad_grid():
    with pytest.raises(ConfigError):
        measure_estimate(GOLDEN, [1.0], 0.01, 2.0, 3, Kx=3)
