import numpy as np
import pytest

from dccal.dcc import fit_dcc
from dccal.simulate import DgpSpec, simulate_panel
from dccal.timeseries import equal_weights


@pytest.fixture(scope="session")
def sim3():
    """Three-asset panel from the default DGP, T=800."""
    return simulate_panel(DgpSpec(n=3, T=800, seed=1))


@pytest.fixture(scope="session")
def fit3(sim3):
    return fit_dcc(sim3.panel, np.asarray(equal_weights(3)), 0.025)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES[k] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
