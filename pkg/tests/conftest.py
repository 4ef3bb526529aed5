import numpy as np
import pytest

from hodge5.fields import MetricField, ModeLattice

# conformal factor used across the suite: generic enough to break the torus
# symmetries (verified: all co-exact clusters at K=1 are pairs)
CONFORMAL_TERMS = [
    {"c": 0.21, "kind": "cos", "k": [1, 0, 0, 0, 0]},
    {"c": 0.17, "kind": "sin", "k": [0, 1, 0, 0, 0]},
    {"c": 0.13, "kind": "cos", "k": [0, 0, 1, 0, 0]},
    {"c": 0.11, "kind": "sin", "k": [0, 0, 0, 1, 0]},
    {"c": 0.09, "kind": "cos", "k": [0, 0, 0, 0, 1]},
    {"c": 0.07, "kind": "sin", "k": [1, 1, 0, 0, 0]},
    {"c": 0.05, "kind": "cos", "k": [0, 1, -1, 0, 0]},
]


@pytest.fixture(scope="session")
def lattice1():
    return ModeLattice(1)


@pytest.fixture(scope="session")
def flat():
    return MetricField.flat()


@pytest.fixture(scope="session")
def conformal():
    """Shared sampled metric; operator caches persist across tests."""
    return MetricField.conformal(CONFORMAL_TERMS, grid_size=12)


@pytest.fixture(scope="session")
def constant_metric():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((5, 5))
    return MetricField.constant(a @ a.T + 5 * np.eye(5))
