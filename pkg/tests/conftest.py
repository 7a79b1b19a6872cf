import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from odcalib import Marginals  # noqa: E402


def random_instance(rng, n=None, scale=1.0):
    """Random cost matrix T ~ U[0, 5] * scale and random positive marginals."""
    if n is None:
        n = int(rng.integers(3, 11))
    T = rng.uniform(0.0, 5.0, (n, n)) * scale
    L = rng.uniform(0.5, 1.5, n)
    W = rng.uniform(0.5, 1.5, n)
    return T, Marginals(L / L.sum(), W / W.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def uniform2():
    return Marginals([0.5, 0.5], [0.5, 0.5])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        terminalreporter.write_line(mod.line(k, ok, detail))
