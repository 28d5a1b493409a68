import numpy as np
import pytest

from entstab.measures import grid_quadrature, make_discrete, two_point_measure, uniform_ball
from entstab.semidiscrete import solve_semidiscrete


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture(scope="session")
def disk256():
    return grid_quadrature(uniform_ball(1.0, 2), 256)


@pytest.fixture(scope="session")
def symmetric_solution(disk256):
    return solve_semidiscrete(disk256, two_point_measure(1.0, 0.0))


@pytest.fixture(scope="session")
def asymmetric_solution(disk256):
    mu = make_discrete([(1.0, 0.0), (-1.0, 0.0)], [0.75, 0.25])
    return solve_semidiscrete(disk256, mu, tol=3e-3)
