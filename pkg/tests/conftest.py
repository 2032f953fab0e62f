import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lti_ident.systems import StateSpace, validate_system

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_system(rng, d_x, d_u=None, d_y=None, rho=0.8) -> StateSpace:
    """Stable, controllable and observable random system (redraws until valid)."""
    d_u = d_x if d_u is None else d_u
    d_y = d_x if d_y is None else d_y
    while True:
        A = rng.standard_normal((d_x, d_x))
        A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
        sys = StateSpace(A, rng.standard_normal((d_x, d_u)), rng.standard_normal((d_y, d_x)))
        if validate_system(sys).ok:
            return sys


def random_well_conditioned(rng, n, max_cond=1e3):
    while True:
        P = rng.standard_normal((n, n))
        if np.linalg.cond(P) < max_cond:
            return P


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register one line each; printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def accept(request):
    records = {}

    def record(number, passed, detail):
        records[number] = (bool(passed), detail)
        ACCEPTANCE[number] = (bool(passed), detail)

    yield record
    if not records:
        ACCEPTANCE.setdefault(request.node.name, (False, "errored before reporting"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (isinstance(k, str), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
