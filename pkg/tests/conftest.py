import warnings

import numpy as np
import pytest

from rotorlattice import AssumptionWarning, ModelSpec, build_lattice, diagonal, linear_potential, power_frequency
from rotorlattice.model import Dissipation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_spec(N=8, dissipation=None, T=1.0, eps=0.04, k=1, potential=None, **kw):
    lat = kw.pop("lattice", None) or build_lattice(1, [N])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AssumptionWarning)
        return ModelSpec(lat, power_frequency(k), potential or linear_potential(),
                         dissipation or diagonal(2), T, eps=eps, **kw)


def hamiltonian_only(N=8, eps=0.04):
    return make_spec(N, Dissipation("none"), T=0.0, eps=eps)


def random_state(rng, N, lo=0.2, hi=2.0, size=None):
    shape = (N,) if size is None else (size, N)
    I = rng.uniform(lo, hi, shape)
    return np.sqrt(2 * I) * np.exp(1j * rng.uniform(0, 2 * np.pi, shape))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
