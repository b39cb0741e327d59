import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qpkdv.spectral_core import FourierField

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = np.array([1.0, (1 + 5 ** 0.5) / 2])

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def band(u: FourierField, lmax: int, kmax: int) -> FourierField:
    """Keep |ell|_1 <= lmax and |k| <= kmax."""
    c = u.coeffs.copy()
    c[u.modes.l1 > lmax] = 0
    c[:, np.abs(u.ks) > kmax] = 0
    return u.with_coeffs(c)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: int(s[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:5s} {'PASS' if ok else 'FAIL'}  {detail}")
