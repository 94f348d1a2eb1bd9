import warnings

import numpy as np
import pytest
from hypothesis import settings

from funcquant.funcdata import FunctionalDataset
from funcquant.simharness import brownian_paths

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brownian_dataset(n, seed, M=101, response=None):
    """Brownian curves with responses from ``response(grid, curves, rng)`` (pure noise if None)."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, M)
    X = brownian_paths(n, grid, rng)
    y = rng.standard_normal(n) if response is None else response(grid, X, rng)
    return FunctionalDataset(grid, X, y)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
