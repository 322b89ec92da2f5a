# tests/conftest.py
import math

import pytest

from app.schemas.family import (
    CubicSpec,
    FlatAdditiveSpec,
    MonicAdditiveSpec,
    MultiplicativeSpec,
    PowerAdditiveSpec,
)
from app.services import orbits

# real root of c^3 + 2c^2 + c + 1: the period-3 superstable quadratic parameter
C_AIRPLANE = -1.7548776662466927


@pytest.fixture()
def quad():
    return MonicAdditiveSpec(d=2)


@pytest.fixture()
def cubic():
    return CubicSpec()


@pytest.fixture()
def flat_boundary():
    """Flat family at the threshold b = 2e where beta = 1 is a parabolic fixed point."""
    return FlatAdditiveSpec(ell=1.0, b=2.0 * math.e)


@pytest.fixture()
def flat_robust():
    return FlatAdditiveSpec(ell=1.0, b=8.0)


@pytest.fixture()
def logistic():
    return MultiplicativeSpec(base="quad4x1mx")


@pytest.fixture()
def power8():
    return PowerAdditiveSpec(ell_minus=8.0, ell_plus=8.0)


@pytest.fixture()
def airplane(quad):
    orbit = orbits.critical_orbit(quad, C_AIRPLANE)
    return orbit, orbits.detect_relations(orbit)


@pytest.fixture()
def basilica(quad):
    orbit = orbits.critical_orbit(quad, -1.0)
    return orbit, orbits.detect_relations(orbit)


@pytest.fixture()
def chebyshev(quad):
    orbit = orbits.critical_orbit(quad, -2.0)
    return orbit, orbits.detect_relations(orbit)
