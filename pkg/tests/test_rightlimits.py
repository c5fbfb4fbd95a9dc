import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susceptlab.errors import BranchUnavailable, NotFound
from susceptlab.functions import Observable
from susceptlab.maps import (
    MapSpec,
    all_bit_strings,
    build_map,
    postcritical_orbit,
    precritical_orbit,
    preimages,
    sample_precritical_orbit,
)
from susceptlab.rightlimits import (
    breuer_simon_witness,
    complete_orbit_check,
    covering_depth,
    enumerate_precritical,
    f_symmetry_check,
    glue,
    max_gap,
    recomposition_error,
    window_from_centers,
)


def _returns(orbit, target, W, levels=6):
    """Indices ``k`` of successively closer returns of ``c_{k+1}`` to ``target``."""
    d = np.abs(orbit.points - target)
    d[:W] = np.inf
    d[len(d) - W:] = np.inf
    ks = []
    for j in range(levels):
        hit = np.nonzero(d < 2.0 ** -(j + 3))[0]
        if hit.size and (not ks or hit[0] > ks[-1]):
            ks.append(int(hit[0]))
    return ks


# ---------------------------------------------------------------- trees


def test_full_tent_tree():
    tree = enumerate_precritical(build_map(MapSpec("tent", {"slope": 2.0})), 3)
    assert tree.counts[-1] == 8 and len(tree.orbits) == 8 and not tree.truncated


def test_tent19_tree_meets_bound(tent19):
    tree = enumerate_precritical(tent19, 10)
    assert tree.counts[-1] >= 2**5 and tree.meets_bound


def test_tree_cap(tent19):
    tree = enumerate_precritical(tent19, 10, cap=4)
    assert len(tree.orbits) == 4 and tree.truncated


def test_tree_matches_bit_string_oracle(tent19):
    """Every surviving string is exactly a bit string whose backward orbit never leaves the core."""
    M = 8
    survivors = set()
    for bits in all_bit_strings(M):
        try:
            precritical_orbit(tent19, bits, M + 1)
        except BranchUnavailable:
            continue
        survivors.add(tuple(bits))
    tree = enumerate_precritical(tent19, M)
    assert {tuple(o.bits) for o in tree.orbits} == survivors
    for o in tree.orbits:
        assert recomposition_error(tent19, o) <= 1e-10


def test_precritical_examples(tent2, tent19):
    np.testing.assert_allclose(precritical_orbit(tent2, [0, 0, 0], 4).points[1:], [0.25, 0.125, 0.0625])
    np.testing.assert_allclose(precritical_orbit(tent2, [1], 2).points, [0.5, 0.75])
    # y = 0.095 = c_2 has only the right preimage in the core for slope 1.9
    below = [0] * 40
    with pytest.raises(BranchUnavailable):
        precritical_orbit(tent19, below, 41)


# ---------------------------------------------------------------- windows


def test_return_window_passes(tent19, orbit19):
    W = 6
    ks = _returns(orbit19, 0.6, W)
    assert len(ks) >= 2
    win = window_from_centers(orbit19, ks, W)
    assert complete_orbit_check(tent19, win).passed


def test_perturbed_window_fails_at_zero(tent19, orbit19):
    rng = np.random.default_rng(1)
    pre = sample_precritical_orbit(tent19, 20, rng)
    win = glue(pre, orbit19, 8)
    assert complete_orbit_check(tent19, win).passed
    bad = complete_orbit_check(tent19, win.perturbed(0, 0.1))
    assert not bad.passed and 0 in bad.violations


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 15))
def test_renascent_windows_pass(seed, W):
    m = build_map(MapSpec("tent", {"slope": 1.9}))
    orbit = postcritical_orbit(m, 100)
    pre = sample_precritical_orbit(m, 40, np.random.default_rng(seed))
    win = glue(pre, orbit, W)
    assert win.b(-1) == pre.points[0] == m.c
    assert win.b(0) == orbit.c(1)
    assert complete_orbit_check(m, win).passed


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(-7, 7), st.floats(1e-6, 0.5))
def test_injected_violation_is_localised(seed, n0, delta):
    m = build_map(MapSpec("tent", {"slope": 1.9}))
    orbit = postcritical_orbit(m, 100)
    win = glue(sample_precritical_orbit(m, 40, np.random.default_rng(seed)), orbit, 8)
    verdict = complete_orbit_check(m, win.perturbed(n0, delta))
    # a moved entry breaks its incoming link, its outgoing link, or both
    assert verdict.violations and set(verdict.violations) <= {n0 - 1, n0}


def test_window_bounds(orbit19):
    with pytest.raises(ValueError):
        window_from_centers(orbit19, [3], 2)
    win = window_from_centers(orbit19, [100, 200], 5)
    with pytest.raises(IndexError):
        win.b(6)


# ---------------------------------------------------------------- covering and symmetry


def test_full_tent_covering(tent2):
    ell, _ = covering_depth(tent2, 0.5, 0.3)
    assert ell <= 2
    assert max_gap([0.125, 0.375, 0.625, 0.875], 0, 1) <= 0.3
    assert covering_depth(tent2, 0.5, 1.0)[0] <= 1


def test_covering_closed_form(tent2):
    # f^{-l}(1/2) for the full tent is (2j+1)/2^{l+1}, with gaps 2^{-l-1} at the ends
    for eps in (0.2, 0.05, 0.01):
        ell, size = covering_depth(tent2, 0.5, eps)
        assert 2.0 ** -(ell + 1) <= eps < 2.0 ** -ell
        assert size == 2**ell


def test_covering_monotone(tent19):
    eps = [0.005, 0.01, 0.02, 0.05, 0.1, 0.3]
    ells = [covering_depth(tent19, tent19.c, e)[0] for e in eps]
    assert all(b <= a for a, b in zip(ells, ells[1:]))
    with pytest.raises(ValueError):
        covering_depth(tent19, 0.5, 0.0)


def test_symmetry_identity_on_full_tent(tent2):
    assert preimages(tent2, 0.5) == pytest.approx([0.25, 0.75])
    v = f_symmetry_check(tent2, Observable.parse("x"))
    assert not v.symmetric
    # the pair over y = 0.5 is 0.5 apart; the widest pair sits over y = c_2
    assert v.max_gap == pytest.approx(1.0)
    assert v.worst_y == pytest.approx(tent2.c2)


def test_symmetry_of_composed_and_even(tent2, tent19):
    psi = Observable.parse("sin(3*x)")
    for m in (tent2, tent19):
        assert f_symmetry_check(m, lambda x, m=m: psi(m(x))).max_gap <= 1e-12
    assert f_symmetry_check(tent2, Observable.parse("(x - 1/2)**2")).symmetric


# ---------------------------------------------------------------- witnesses


def test_witness_tent19(tent19):
    # agreement scales with the closest approach, which needs a long prefix to reach 1e-6
    orbit = postcritical_orbit(tent19, 10**7)
    delta = 0.05
    w = breuer_simon_witness(tent19, orbit, Observable.parse("x"), delta)
    assert w.x != w.x_tilde
    assert abs(tent19.iterate(np.float64(w.x), w.ell) - tent19.c) <= 1e-9
    assert abs(tent19.iterate(np.float64(w.x_tilde), w.ell) - tent19.c) <= 1e-9
    assert w.difference_at_zero() > delta
    assert w.agreement() <= 1e-6
    assert complete_orbit_check(tent19, w.window).passed


def test_witness_not_found_for_constant(tent19, orbit19):
    with pytest.raises(NotFound) as info:
        breuer_simon_witness(tent19, orbit19, Observable.parse("1"), 0.05)
    assert not info.value.finite_orbit


def test_witness_finite_orbit(tent2, orbit2):
    with pytest.raises(NotFound) as info:
        breuer_simon_witness(tent2, orbit2, Observable.parse("x"), 0.05)
    assert info.value.finite_orbit


def test_bit_strings_are_complete():
    strings = list(all_bit_strings(4))
    assert len(strings) == 16 and len(set(map(tuple, strings))) == 16
    assert set(map(tuple, strings)) == set(itertools.product((0, 1), repeat=4))
