import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susceptlab.errors import BranchUnavailable, DiscontinuousAtC, EndpointViolated, ExpansionViolated, MapSpecError
from susceptlab.maps import (
    LEFT,
    RIGHT,
    MapSpec,
    all_bit_strings,
    build_map,
    inverse_step,
    postcritical_orbit,
    precritical_orbit,
    preimages,
    sample_precritical_orbit,
)


def test_full_tent_constants(tent2):
    assert tent2.lam == 2.0
    assert tent2.c == 0.5
    assert (tent2.c2, tent2.c1) == (0.0, 1.0)


def test_contracting_tent_rejected():
    with pytest.raises(ExpansionViolated):
        build_map(MapSpec("tent", {"slope": 0.9}))


def test_skewed_tent_rate():
    m = build_map(MapSpec("skewed-tent", {"height": 0.96, "c": 0.4}))
    assert m.lam == pytest.approx(1.6, abs=1e-14)


def test_polynomial_endpoint_and_continuity_checks():
    with pytest.raises(EndpointViolated):
        build_map(MapSpec("polynomial-branches", {"left": [0.1, 2.0], "right": [2.0, -2.0], "c": 0.5}))
    with pytest.raises(DiscontinuousAtC):
        build_map(MapSpec("polynomial-branches", {"left": [0.0, 2.0], "right": [1.8, -1.8], "c": 0.5}))
    with pytest.raises(MapSpecError):
        build_map(MapSpec("moebius", {}))


def test_polynomial_map_valid(poly_map):
    assert poly_map.lam > 1
    assert poly_map(np.array([0.0]))[0] == 0.0
    assert abs(poly_map(np.array([1.0]))[0]) < 1e-14


def test_tent2_orbit_closed_form(tent2):
    o = postcritical_orbit(tent2, 5)
    assert list(o.points) == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert list(o.derivs) == [-2.0, -4.0, -8.0, -16.0]
    pp = o.preperiodicity
    assert (pp.m, pp.p, pp.proven) == (2, 1, True)


def test_tent19_orbit_in_core(tent19):
    o = postcritical_orbit(tent19, 10)
    assert tent19.c2 == pytest.approx(0.095) and tent19.c1 == pytest.approx(0.95)
    assert np.all((o.points >= tent19.c2 - 1e-15) & (o.points <= tent19.c1 + 1e-15))
    assert o.preperiodicity is None


def test_minimal_orbit(tent19):
    o = postcritical_orbit(tent19, 2)
    assert len(o) == 2
    assert o.derivs[0] == pytest.approx(-1.9)
    with pytest.raises(ValueError):
        postcritical_orbit(tent19, 1)


def test_preimage_examples(tent2):
    assert preimages(tent2, 0.5) == [0.25, 0.75]
    assert preimages(tent2, 1.0) == [0.5]
    assert preimages(tent2, 1.2) == []


def test_precritical_examples(tent2, tent19):
    assert list(precritical_orbit(tent2, [LEFT, LEFT], 3).points) == [0.5, 0.25, 0.125]
    assert list(precritical_orbit(tent2, [RIGHT], 2).points) == [0.5, 0.75]
    # left preimage of 0.5 under slope 1.9 is 0.263; its left preimage 0.138; then 0.0727 < c_2
    with pytest.raises(BranchUnavailable) as info:
        precritical_orbit(tent19, [LEFT, LEFT, LEFT], 4)
    assert info.value.depth == 4


@settings(max_examples=60, deadline=None)
@given(st.floats(1.2, 2.0), st.floats(0.0, 1.0))
def test_inverse_branches_invert(slope, u):
    m = build_map(MapSpec("tent", {"slope": slope}))
    y = m.c2 + u * (m.c1 - m.c2)
    for side in (LEFT, RIGHT):
        x = inverse_step(m, y, side)
        if x is not None:
            assert abs(float(m(np.array([x]))[0]) - y) <= 1e-12
            assert m.c2 - 1e-15 <= x <= m.c1 + 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(1.1, 2.0), st.integers(2, 400))
def test_orbit_stays_in_core_and_derivatives_grow(slope, K):
    m = build_map(MapSpec("tent", {"slope": slope}))
    o = postcritical_orbit(m, K)
    assert np.all((o.points >= m.c2 - 1e-12) & (o.points <= m.c1 + 1e-12))
    assert np.all(np.abs(o.derivs) >= m.lam ** np.arange(1, K) * (1 - 1e-12))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampled_precritical_orbit_recomposes(seed):
    m = build_map(MapSpec("tent", {"slope": 1.9}))
    pre = sample_precritical_orbit(m, 15, np.random.default_rng(seed))
    x = pre.points[-1]
    for _ in range(len(pre) - 1):
        x = float(m(np.array([x]))[0])
    assert abs(x - m.c) <= 1e-9


def test_bit_string_count():
    assert sum(1 for _ in all_bit_strings(4)) == 16
