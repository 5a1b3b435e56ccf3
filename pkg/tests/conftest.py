import warnings

import numpy as np
import pytest

from qpresponse.kam import Schedule, solve
from qpresponse.ledger import LedgerWarning
from qpresponse.systems import elliptic_demo, hyperbolic_demo


def pytest_configure(config):
    warnings.simplefilter("ignore", LedgerWarning)


def schedule_for(spec, **kw):
    return Schedule(rho0=spec.rho, tau=spec.freq.tau, K_trunc=spec.K, deg_max=spec.deg_max, **kw)


@pytest.fixture(scope="session")
def linear_spec():
    return elliptic_demo()


@pytest.fixture(scope="session")
def quadratic_spec():
    return elliptic_demo(quadratic=True)


@pytest.fixture(scope="session")
def hyperbolic_spec():
    return hyperbolic_demo()


@pytest.fixture(scope="session")
def linear_report(linear_spec):
    return solve(linear_spec, 1e-3, schedule_for(linear_spec), conjugacy_samples=8)


@pytest.fixture(scope="session")
def quadratic_report(quadratic_spec):
    """Six steps m = 0..5 at eps = 1e-2, no early stop."""
    s = schedule_for(quadratic_spec, m_max=5, p_tol=0.0)
    return solve(quadratic_spec, 1e-2, s, require_convergence=False, conjugacy_samples=16, keep_states=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
