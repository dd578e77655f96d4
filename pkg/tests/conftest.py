import functools

import numpy as np
import pytest

from degwave.coefficients import CoefficientProfile as Profile, CoefficientSet
from degwave.weighted_spaces import Grid, estimate_chp

NO_DRIFT = Profile.power(0.0, 0.0)


def power_set(ka, kd, lam=0.0, b=NO_DRIFT, sa=1.0, sd=1.0):
    return CoefficientSet(Profile.power(ka, sa), b, Profile.power(kd, sd), lam)


def unit_set(lam=0.0):
    return CoefficientSet(Profile.constant(1.0), NO_DRIFT, Profile.constant(1.0), lam)


@functools.lru_cache(maxsize=None)
def chp_of(ka, kd, n=4096):
    return estimate_chp(Grid(n, power_set(ka, kd)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sqrt_set():
    return power_set(0.5, 0.5)


@pytest.fixture(scope="session")
def sqrt_chp():
    return chp_of(0.5, 0.5)
