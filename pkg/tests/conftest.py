import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctxfill import dataio
from ctxfill.rng import RngState


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A small synthetic image directory shared across tests."""
    root = tmp_path_factory.mktemp("synth")
    dataio.generate_synthetic_dataset(root, count=10, size=32, seed=5)
    return root


def pytest_addoption(parser):
    parser.addoption("--backend", default=None, choices=("numba", "numpy"),
                     help="force a kernel backend for the whole run")


@pytest.fixture(autouse=True, scope="session")
def _backend_option(request):
    from ctxfill.backend import set_backend
    choice = request.config.getoption("--backend")
    if choice:
        set_backend(choice)
    yield
    set_backend(None)


def assert_exact(a, b):
    np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
