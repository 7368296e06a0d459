import numpy as np
import pytest

from tumorlab.experiments import _STATIONARY_CACHE
from tumorlab.grid import RadialGrid
from tumorlab.kinetics import KineticsSpec
from tumorlab.linearized import build_operators
from tumorlab.stationary import solve_stationary


@pytest.fixture(scope="session")
def default_spec():
    return KineticsSpec()


@pytest.fixture(scope="session")
def grid801():
    return RadialGrid.uniform(801)


@pytest.fixture(scope="session")
def grid201():
    return RadialGrid.uniform(201)


@pytest.fixture(scope="session")
def stationary801(default_spec, grid801):
    sol = solve_stationary(default_spec, grid801)
    # share with the experiments-level cache so orchestrated runs reuse it
    _STATIONARY_CACHE[(default_spec, 801)] = sol
    return sol


@pytest.fixture(scope="session")
def stationary201(default_spec, grid201):
    sol = solve_stationary(default_spec, grid201)
    _STATIONARY_CACHE[(default_spec, 201)] = sol
    return sol


@pytest.fixture(scope="session")
def operators801(stationary801, default_spec):
    return build_operators(stationary801, default_spec)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
