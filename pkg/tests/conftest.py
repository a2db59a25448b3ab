import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from config import get_settings
from core.matrix import NonNegMatrix
from main import app
from services.pf_service import get_pf_service

# Set test environment
os.environ["PF_ENVIRONMENT"] = "test"

ASYM = [[0.2, 0.4], [0.3, 0.1]]


@pytest.fixture
def client():
    """Create test client"""
    return TestClient(app)


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Setup test environment variables"""
    # Store original values
    original_env = os.environ.copy()

    os.environ["PF_ENVIRONMENT"] = "test"
    os.environ["PF_LOG_LEVEL"] = "WARNING"
    get_settings.cache_clear()
    get_pf_service.cache_clear()

    yield

    # Restore original environment
    os.environ.clear()
    os.environ.update(original_env)
    get_settings.cache_clear()
    get_pf_service.cache_clear()


@pytest.fixture
def asym_matrix():
    """2x2 instance with lambda* = 0.5, u* = (1, 0.75), eta* = (1, 1)"""
    return NonNegMatrix.from_dense(ASYM)


@pytest.fixture
def asym_text():
    return "# 2x2 asymmetric\n2\n0 0 0.2\n0 1 0.4\n1 0 0.3\n1 1 0.1\n"


@pytest.fixture
def periodic_text():
    return "2\n0 1 0.5\n1 0 0.5\n"


@pytest.fixture
def reducible_text():
    return "2\n0 0 0.5\n0 1 0.2\n1 1 0.5\n"


@pytest.fixture
def stochastic_text():
    return "2\n0 0 0.5\n0 1 0.5\n1 0 0.3\n1 1 0.7\n"


@pytest.fixture
def matrix_file(tmp_path):
    """Write matrix text to a temporary file and return its path"""

    def write(text: str, name: str = "matrix.txt"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


def random_irreducible(rng: np.random.Generator, n: int, density: float = 0.3) -> NonNegMatrix:
    """Random sub-stochastic matrix whose support contains the cycle 0 -> 1 -> ... -> n-1 -> 0"""
    dense = np.where(rng.random((n, n)) < density, rng.random((n, n)), 0.0)
    dense[np.arange(n), (np.arange(n) + 1) % n] += 0.1 + rng.random(n)
    dense /= dense.sum(axis=1, keepdims=True)
    dense *= rng.uniform(0.5, 1.0, size=(n, 1))
    return NonNegMatrix.from_dense(dense)


@pytest.fixture
def irreducible_factory():
    """Seeded generator of random irreducible sub-stochastic matrices"""

    def make(seed: int, n: int, density: float = 0.3) -> NonNegMatrix:
        return random_irreducible(np.random.default_rng(seed), n, density)

    return make
