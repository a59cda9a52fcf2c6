import numpy as np
import pytest

from selpred import kernels
from selpred.numeric_core import Rng

BACKENDS = ["python"]
try:
    kernels.get_backend("cython")
    BACKENDS.append("cython")
except ImportError:
    pass


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.get_backend(request.param))
    return request.param


@pytest.fixture
def rng():
    return Rng(1234)


def random_pair(seed, n=8, d=4):
    r = Rng(seed)
    z = r.normal((n, d))
    return z, z + 0.5 * r.normal((n, d))


def probs_from_pmax(pmax):
    """Two-class probability rows whose top entry (class 0) is ``pmax``."""
    pmax = np.asarray(pmax, dtype=float)
    return np.column_stack([pmax, 1.0 - pmax])
