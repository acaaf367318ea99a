import numpy as np
import pytest

from manifold_mcmc import builtin_problem


@pytest.fixture(scope="session")
def circle_problem():
    return builtin_problem("circle")


@pytest.fixture(scope="session")
def torus_problem():
    return builtin_problem("torus", {"R": 1.0, "r": 0.5})


@pytest.fixture(scope="session")
def sphere_problem():
    return builtin_problem("sphere9d")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
