import math
import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from optexpand import MarketParams  # noqa: E402
from optexpand.model import rho_max  # noqa: E402

import oracles  # noqa: E402


@pytest.fixture
def wait_case():
    return MarketParams(**oracles.WAIT_CASE, x0=1.0)


@pytest.fixture
def sweep_case():
    return MarketParams(**oracles.SWEEP_CASE, rho=0.05, x0=1.0)


@st.composite
def market_params(draw, feasible=True):
    """Random coefficients; ``feasible`` keeps both expansion conditions true."""
    r = draw(st.floats(0.01, 0.15))
    sigma = draw(st.floats(0.2, 1.5))
    m = draw(st.floats(0.2, 3.0))
    beta = draw(st.floats(0.2, 3.0))
    T = draw(st.floats(0.5, 20.0))
    ratio = draw(st.floats(1.02, 5.0))
    mu = ratio * sigma**2 * beta * m
    base = MarketParams(r=r, mu=mu, sigma=sigma, rho=0.0, beta=beta, m=m, T=T)
    frac = draw(st.floats(0.0, 1.0) if feasible else st.floats(0.0, 1.5))
    return base.replace(rho=frac * rho_max(base))


def close(a, b, tol):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
