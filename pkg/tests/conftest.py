import numpy as np
import pytest

from susceptlab.acim import build_ulam, saltus_decomposition, stationary_density
from susceptlab.maps import MapSpec, build_map, postcritical_orbit


@pytest.fixture(scope="session")
def tent2():
    return build_map(MapSpec("tent", {"slope": 2.0}))


@pytest.fixture(scope="session")
def tent19():
    return build_map(MapSpec("tent", {"slope": 1.9}))


@pytest.fixture(scope="session")
def poly_map():
    return build_map(MapSpec("polynomial-branches", {"left": [0.0, 1.5, 0.6], "right": [1.6, -1.2, -0.4], "c": 0.5}))


@pytest.fixture(scope="session")
def orbit2(tent2):
    return postcritical_orbit(tent2, 1000)


@pytest.fixture(scope="session")
def orbit19(tent19):
    return postcritical_orbit(tent19, 200_000)


@pytest.fixture(scope="session")
def acim19(tent19, orbit19):
    op = build_ulam(tent19, 2**12)
    return saltus_decomposition(tent19, orbit19, stationary_density(op), op)


@pytest.fixture(scope="session")
def acim2(tent2, orbit2):
    op = build_ulam(tent2, 2**10)
    return saltus_decomposition(tent2, orbit2, stationary_density(op), op)


def exact_tent_s1(slope, n_terms=200):
    """Normalisation oracle for tent maps on [0, 1]: rho = s1 sum_n 1{y >= c_n} / D_{n-1}.

    Computed here by plain iteration, independent of the package.
    """
    c, x, D, total = 0.5, slope * 0.5, 1.0, 0.0
    for _ in range(n_terms):
        total += (1.0 - x) / D
        D *= slope if x < c else -slope
        x = slope * x if x <= c else slope * (1.0 - x)
    return 1.0 / total
