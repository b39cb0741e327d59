"""Non-resonance checks on the parameter lambda and excluded-measure estimates.

The frequency is lambda * omega_bar with lambda in [1/2, 3/2].  Three kinds of
conditions are checked:

* zeroth:  |omega_bar . ell| >= alpha0 / |ell|^tau0
* first:   |lambda omega_bar . ell + d_k| >= alpha |k|^5 / [ell]^tau
* second:  |lambda omega_bar . ell + d_i - d_j| >= alpha |i^5 - j^5| / [ell]^tau,  i != j

The second kind is only enumerated in the ball i^4 + j^4 <= 16 |omega_bar| |ell|_1;
outside it the divisor is automatically large.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "ResonanceRecord",
    "CheckResult",
    "DiophantineResult",
    "ell_ball",
    "diophantine_check",
    "melnikov_first",
    "melnikov_second",
    "second_pairs",
    "MeasureReport",
    "measure_estimate",
    "alpha_schedule",
    "golden_frequency",
]


def golden_frequency(v: int) -> np.ndarray:
    """(1, g, g^2, ...) with the golden ratio g, a badly approximable direction."""
    g = (1 + 5 ** 0.5) / 2
    return g ** np.arange(v, dtype=float)


def alpha_schedule(alpha0: float, m: int, n: int) -> float:
    """alpha_{mn} = (alpha0 / 2^m)(1 + 2^{-(n-m)})."""
    return alpha0 / 2 ** m * (1 + 2.0 ** (-(n - m)))


@dataclass
class ResonanceRecord:
    kind: str
    i: int | None
    j: int | None
    ell: tuple
    value: float
    threshold: float
    interval: tuple | None = None

    @property
    def ratio(self) -> float:
        return abs(self.value) / self.threshold if self.threshold else np.inf

    def as_row(self) -> str:
        return f"{self.kind}:{self.i}:{self.j}:{'/'.join(map(str, self.ell))}"


@dataclass
class CheckResult:
    passed: bool
    records: list = field(default_factory=list)

    @property
    def worst(self):
        return min(self.records, key=lambda r: r.ratio) if self.records else None

    def __bool__(self):
        return self.passed


@dataclass
class DiophantineResult:
    passed: bool
    worst_ell: tuple | None
    worst_value: float
    alpha_max: float

    def __bool__(self):
        return self.passed


def ell_ball(v: int, L: int, include_zero: bool = True) -> np.ndarray:
    """All ell in Z^v with |ell|_1 <= L."""
    r = range(-L, L + 1)
    out = [e for e in itertools.product(r, repeat=v) if sum(map(abs, e)) <= L]
    if not include_zero:
        out = [e for e in out if any(e)]
    return np.array(out, dtype=np.int64).reshape(len(out), v)


def _canon(ell) -> tuple:
    """Sign-normalized witness: first nonzero entry positive."""
    ell = tuple(int(x) for x in ell)
    for x in ell:
        if x:
            return ell if x > 0 else tuple(-y for y in ell)
    return ell


def _bracket(ells):
    return np.maximum(np.abs(ells).sum(axis=1), 1).astype(float)


def diophantine_check(omega_bar, alpha0: float, tau0: float, L: int) -> DiophantineResult:
    """Brute force over 0 < |ell|_1 <= L."""
    omega_bar = np.asarray(omega_bar, dtype=float)
    if L <= 0:
        return DiophantineResult(True, None, np.inf, np.inf)
    ells = ell_ball(len(omega_bar), L, include_zero=False)
    l1 = np.abs(ells).sum(axis=1)
    val = np.abs(ells @ omega_bar) * l1.astype(float) ** tau0
    a = int(np.lexsort((l1, val))[0])
    worst = float(val[a])
    return DiophantineResult(worst >= alpha0, _canon(ells[a]), worst, worst)


def _d_table(D, Kx=None):
    """(kidx, d) from a DiagonalModel, an array over k != 0, or None (d_k = k^5)."""
    if D is None:
        if Kx is None:
            raise ConfigError("Kx is needed when no diagonal model is given")
        k = np.concatenate([np.arange(-Kx, 0), np.arange(1, Kx + 1)])
        return k, k.astype(float) ** 5
    if hasattr(D, "kidx"):
        return np.asarray(D.kidx), np.asarray(D.d, dtype=float)
    d = np.asarray(D, dtype=float)
    Kx = len(d) // 2
    return np.concatenate([np.arange(-Kx, 0), np.arange(1, Kx + 1)]), d


def melnikov_first(lam: float, D, alpha: float, tau: float, L: int, omega_bar, Kx=None) -> CheckResult:
    omega_bar = np.asarray(omega_bar, dtype=float)
    k, d = _d_table(D, Kx)
    ells = ell_ball(len(omega_bar), L)
    div = lam * (ells @ omega_bar)[:, None] + d[None, :]
    thr = alpha * np.abs(k).astype(float)[None, :] ** 5 / _bracket(ells)[:, None] ** tau
    bad = np.argwhere(np.abs(div) < thr)
    recs = [ResonanceRecord("first", int(k[b]), None, tuple(int(x) for x in ells[a]),
                            float(div[a, b]), float(thr[a, b])) for a, b in bad]
    recs.sort(key=lambda r: r.ratio)
    return CheckResult(not recs, recs)


def second_pairs(k: np.ndarray, ell_l1: int, omega_norm: float, restrict: bool = True):
    """Index pairs (a, b), a != b, inside the resonance ball for one |ell|_1."""
    K4 = k.astype(float) ** 4
    A, B = np.nonzero(~np.eye(len(k), dtype=bool))
    if restrict:
        keep = K4[A] + K4[B] <= 16 * omega_norm * ell_l1
        A, B = A[keep], B[keep]
    return A, B


def melnikov_second(lam: float, D, alpha: float, tau: float, L: int, omega_bar, Kx=None,
                    restrict: bool = True) -> CheckResult:
    omega_bar = np.asarray(omega_bar, dtype=float)
    k, d = _d_table(D, Kx)
    ells = ell_ball(len(omega_bar), L)
    wn = float(np.linalg.norm(omega_bar))
    k5 = k.astype(float) ** 5
    recs = []
    for ell, l1, br in zip(ells, np.abs(ells).sum(axis=1), _bracket(ells)):
        A, B = second_pairs(k, int(l1), wn, restrict)
        if not len(A):
            continue
        div = lam * float(ell @ omega_bar) + d[A] - d[B]
        thr = alpha * np.abs(k5[A] - k5[B]) / br ** tau
        for a, b, x, t in zip(A, B, div, thr):
            if abs(x) < t:
                recs.append(ResonanceRecord("second", int(k[a]), int(k[b]), tuple(int(y) for y in ell),
                                            float(x), float(t)))
    recs.sort(key=lambda r: r.ratio)
    return CheckResult(not recs, recs)


# ---------------------------------------------------------------------------
# measure estimates on a lambda grid


@dataclass
class MeasureReport:
    lambdas: np.ndarray
    excluded: np.ndarray
    worst: list
    alpha0: float
    tau: float
    intervals: list
    fraction: float
    measure: float
    max_width_ratio: float
    resolution: float
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["lambda", "pass", "worst"])
        for lam, ex, wr in zip(self.lambdas, self.excluded, self.worst):
            w.writerow([f"{lam:.12g}", int(not ex), wr or ""])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "tau": self.tau,
            "grid_points": int(len(self.lambdas)),
            "resolution": self.resolution,
            "excluded_fraction": self.fraction,
            "excluded_measure": self.measure,
            "intervals": len(self.intervals),
            "max_width_ratio": self.max_width_ratio,
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of True runs along the last axis, per row."""
    m = np.pad(mask.astype(np.int8), ((0, 0), (1, 1)))
    dif = np.diff(m, axis=1)
    rows_s, starts = np.nonzero(dif == 1)
    rows_e, stops = np.nonzero(dif == -1)
    return rows_s, starts, stops


def measure_estimate(omega_bar, lambdas, alpha0: float, tau: float, L: int, D=None, Kx=None,
                     n_steps: int = 1, restrict: bool = True) -> MeasureReport:
    """Excluded fraction of a uniform lambda grid under all first/second conditions.

    For every outer index n <= n_steps the first condition uses alpha_{nn} and
    the second uses alpha_{mn}, m <= n.  Each triple's excluded run is compared
    with the bound 9 alpha / [ell]^tau.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or len(lambdas) < 2:
        raise ConfigError("need a one-dimensional lambda grid with at least two points")
    h = float(np.max(np.diff(lambdas)))
    omega_bar = np.asarray(omega_bar, dtype=float)
    k, d = _d_table(D, Kx)
    ells = ell_ball(len(omega_bar), L)
    wn = float(np.linalg.norm(omega_bar))
    dots = ells @ omega_bar
    br = _bracket(ells)
    k5 = k.astype(float) ** 5

    # (triple) -> divisor offset c, slope dot, weight w, ell index, label
    rows = []
    for a in range(len(ells)):
        for b in range(len(k)):
            rows.append(("first", int(k[b]), None, a, d[b], abs(k5[b])))
        A, B = second_pairs(k, int(np.abs(ells[a]).sum()), wn, restrict)
        for i, j in zip(A, B):
            rows.append(("second", int(k[i]), int(k[j]), a, d[i] - d[j], abs(k5[i] - k5[j])))
    kinds = np.array([r[0] == "first" for r in rows])
    aidx = np.array([r[3] for r in rows])
    off = np.array([r[4] for r in rows])
    wts = np.array([r[5] for r in rows], dtype=float)
    # largest alpha across the schedule for each kind
    a_first = max(alpha_schedule(alpha0, n, n) for n in range(1, n_steps + 1))
    a_second = max(alpha_schedule(alpha0, m, n) for n in range(1, n_steps + 1) for m in range(1, n + 1))
    alpha = np.where(kinds, a_first, a_second)
    thr = alpha * wts / br[aidx] ** tau

    excluded = np.zeros(len(lambdas), dtype=bool)
    worst_ratio = np.full(len(lambdas), np.inf)
    worst_row = np.full(len(lambdas), -1)
    intervals = []
    max_ratio = 0.0
    chunk = max(1, 2_000_000 // len(lambdas))
    for s in range(0, len(rows), chunk):
        sl = slice(s, s + chunk)
        div = lambdas[None, :] * dots[aidx[sl]][:, None] + off[sl][:, None]
        ratio = np.abs(div) / thr[sl][:, None]
        mask = ratio < 1
        if not mask.any():
            continue
        excluded |= mask.any(axis=0)
        r = np.argmin(ratio, axis=0)
        better = ratio[r, np.arange(len(lambdas))] < worst_ratio
        worst_ratio[better] = ratio[r, np.arange(len(lambdas))][better]
        worst_row[better] = s + r[better]
        for row, st, sp in zip(*_runs(mask)):
            g = s + row
            width = lambdas[sp - 1] - lambdas[st] + h
            bound = 9 * alpha[g] / br[aidx[g]] ** tau
            max_ratio = max(max_ratio, (width - h) / bound)
            kind, i, j, a, _, _ = rows[g]
            intervals.append(ResonanceRecord(kind, i, j, tuple(int(x) for x in ells[a]),
                                             float(np.min(np.abs(div[row, st:sp]))), float(thr[g]),
                                             (float(lambdas[st]), float(lambdas[sp - 1]))))
    worst = []
    for wr in worst_row:
        if wr < 0:
            worst.append(None)
        else:
            kind, i, j, a, _, _ = rows[wr]
            worst.append(ResonanceRecord(kind, i, j, tuple(int(x) for x in ells[a]), 0.0, 1.0).as_row())
    frac = float(excluded.mean())
    span = float(lambdas[-1] - lambdas[0]) + h
    return MeasureReport(lambdas, excluded, worst, alpha0, tau, intervals, frac, frac * span,
                         max_ratio, h, {"n_steps": n_steps, "L": L, "triples": len(rows)})
