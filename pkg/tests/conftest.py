import sys

import numpy as np
import pytest

from ksop.spectral import SpectralParams, reality_fill


@pytest.fixture
def params():
    return SpectralParams(nu=0.085, N=24)


def random_state(rng, params, scale=1.0):
    u = scale * (rng.uniform(-1, 1, params.N) + 1j * rng.uniform(-1, 1, params.N))
    return reality_fill(u, params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
