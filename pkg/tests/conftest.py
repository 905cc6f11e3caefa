import numpy as np
import pytest

from ltfr.datamodel import generate_synthetic


@pytest.fixture(scope="session")
def small_bundle():
    return generate_synthetic(n_artists=200, n_users=300, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
