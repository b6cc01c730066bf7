import numpy as np
import pytest

from rescnn import _kernels

ACCEPTANCE_RESULTS = []


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    kernels = _kernels.BACKENDS[request.param]
    monkeypatch.setattr(_kernels, "active", kernels)
    return kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
