import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susceptlab.acim import build_ulam, saltus_decomposition, stationary_density
from susceptlab.errors import OutsideDomain, SingularSystem, TailUnreachable
from susceptlab.functions import Observable, Perturbation
from susceptlab.maps import MapSpec, build_map, postcritical_orbit, precritical_orbit, sample_precritical_orbit
from susceptlab.series import (
    _geometric_K,
    _poly_geometric_tail,
    alpha_eval,
    direct_terms,
    horizontality_order,
    horizontality_sum,
    make_horizontal,
    psi_sing_direct,
    rational_sigma,
    rotated_sums,
    sigma_eval,
    sigma_outer_eval,
    susceptibility_direct,
    susceptibility_eval,
    u_eval,
    v_at_one_resummed,
    v_eval,
)

CENTERED = Observable.parse("x - 1/2")
BUMP = Perturbation.parse("x*(1-x)")


def tent2_sigma(z):
    return 0.5 - 0.5 * z / (1 - z)


@pytest.fixture(scope="module")
def horizontal19(tent19, orbit19):
    return make_horizontal(tent19, orbit19, BUMP, [Perturbation.parse("x**2*(1-x)")], 1)


# ---------------------------------------------------------------- sigma


def test_sigma_constant_term(orbit19):
    v = sigma_eval(orbit19, Observable.parse("sin(pi*x)"), 0)
    assert v.value == pytest.approx(math.sin(math.pi * orbit19.c(1)), abs=1e-15)


def test_sigma_full_tent_closed_form(orbit2):
    assert abs(sigma_eval(orbit2, CENTERED, 0.5).value) <= 1e-12
    partial = sum(CENTERED(np.array([orbit2.c(k + 1)]))[0] * 0.5**k for k in range(60))
    assert abs(partial) <= 1e-12
    for z in (0.3, -0.7, 0.5j, 0.8 * cmath.exp(2j)):
        assert sigma_eval(orbit2, CENTERED, z).value == pytest.approx(tent2_sigma(z), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_abel_matches_direct(r, arg, omega):
    m = build_map(MapSpec("tent", {"slope": 1.9}))
    orbit = postcritical_orbit(m, 5000)
    phi = Observable.parse("cos(3*x)")
    z = r * cmath.exp(1j * arg)
    d = sigma_eval(orbit, phi, z, tol=1e-13)
    a = sigma_eval(orbit, phi, z, mode="abel", tol=1e-13, omega=omega)
    assert abs(d.value - a.value) <= d.tail + a.tail + 1e-12


def test_abel_at_spec_point(orbit19):
    phi = Observable.parse("x")
    z = 0.9 * cmath.exp(1j)
    d = sigma_eval(orbit19, phi, z, tol=1e-12)
    a = sigma_eval(orbit19, phi, z, mode="abel", tol=1e-12)
    assert abs(d.value - a.value) <= 1e-10


def test_sigma_domain_and_tail(orbit2):
    with pytest.raises(OutsideDomain):
        sigma_eval(orbit2, CENTERED, 1.0)
    short = postcritical_orbit(build_map(MapSpec("tent", {"slope": 1.9})), 50)
    with pytest.raises(TailUnreachable):
        sigma_eval(short, CENTERED, 0.99, tol=1e-12)


def test_rotated_sums_examples(orbit2, orbit19):
    one = Observable.parse("1")
    np.testing.assert_allclose(rotated_sums(orbit2, one, math.pi, 8), [1, 0] * 4, atol=1e-14)
    S = rotated_sums(orbit2, CENTERED, 0.0, 10)
    np.testing.assert_allclose(S.real, [0.5] + [0.5 - (k - 1) / 2 for k in range(2, 11)], atol=1e-14)
    # omega-coboundary phi = psi - e^{i omega} psi o f telescopes
    omega = 1.0
    psi = Observable.parse("sin(2*x)")
    m = build_map(MapSpec("tent", {"slope": 1.9}))

    def phi(x):
        return psi(x) - cmath.exp(1j * omega) * psi(m(x))

    S = rotated_sums(orbit19, phi, omega, 500)
    k = np.arange(1, 501)
    expect = psi(np.array([orbit19.c(1)]))[0] - np.exp(1j * k * omega) * psi(orbit19.points[1:501])
    assert np.max(np.abs(S - expect)) <= 1e-12


def test_sigma_outer_examples():
    m = build_map(MapSpec("tent", {"slope": 2.0}))
    pre = precritical_orbit(m, [0] * 80, 80)
    x = Observable.parse("x")
    # y_{-m} = 2^{1-m} with y_{-1} = c, so the sum is -sum 4^{-m} = -1/3
    assert sigma_outer_eval(pre, x, 2.0, tol=1e-14).value == pytest.approx(-1 / 3, abs=1e-13)
    for R in (10.0, 1e3):
        assert abs(sigma_outer_eval(pre, x, R).value) <= 1.0 / (R - 1)
    with pytest.raises(TailUnreachable):
        sigma_outer_eval(precritical_orbit(m, [1] * 10, 10), x, 1.01, tol=1e-12)
    with pytest.raises(OutsideDomain):
        sigma_outer_eval(pre, x, 0.9)


def test_rational_form_matches_direct_coefficients(orbit2):
    rs = rational_sigma(orbit2, CENTERED)
    direct = CENTERED(orbit2.points[:51])
    np.testing.assert_allclose(rs.coefficients(51), direct, atol=1e-15)
    assert rs(0.4) == pytest.approx(tent2_sigma(0.4), abs=1e-14)
    assert rs.residue(1.0) == pytest.approx(0.5, abs=1e-15)
    assert rs.period_average(1.0) == pytest.approx(-rs.residue(1.0), abs=1e-15)


def test_rational_form_purely_periodic():
    slope = (1 + math.sqrt(5)) / 2  # c has period 3
    m = build_map(MapSpec("tent", {"slope": slope}))
    orbit = postcritical_orbit(m, 200)
    assert (orbit.preperiodicity.m, orbit.preperiodicity.p) == (1, 3)
    phi = Observable.parse("x**2")
    rs = rational_sigma(orbit, phi)
    assert len(rs.P) == 0
    # float iterates drift off the unstable cycle, so compare with the exact period
    period = phi(orbit.points[:3])
    np.testing.assert_allclose(rs.coefficients(60), np.tile(period, 20), atol=1e-14)
    z = 0.6 * cmath.exp(0.4j)
    closed = sum(period[j] * z**j for j in range(3)) / (1 - z**3)
    assert rs(z) == pytest.approx(closed, abs=1e-13)


# ---------------------------------------------------------------- alpha, U, V


def test_alpha_full_tent_vanishes(tent2, orbit2):
    assert abs(alpha_eval(tent2, orbit2, BUMP, 1, 1.0).value) <= 1e-15
    assert abs(u_eval(tent2, orbit2, BUMP, -1.0, 1.0).value) <= 1e-15


def test_zero_perturbation_gives_zero(tent19, orbit19, acim19):
    X = Perturbation.zero()
    phi = Observable.parse("x")
    for z in (1.0, 0.8, 0.9j, 1.2):
        assert alpha_eval(tent19, orbit19, X, 1, z).value == 0
        U, V = u_eval(tent19, orbit19, X, acim19.s1, z), v_eval(tent19, orbit19, X, phi, acim19.s1, z)
        assert U.value == 0 and V.value == 0
    for ell in range(4):
        assert horizontality_sum(tent19, orbit19, X, ell).value == 0
    for z in (0.3, 0.7, 0.95j):
        assert susceptibility_eval(tent19, orbit19, X, phi, acim19, z).value == 0
    first, _ = v_at_one_resummed(tent19, orbit19, X, phi, acim19.s1)
    assert first.value == 0


def test_alpha_derivative_by_finite_differences(tent19, orbit19):
    X = Perturbation.parse("x**2*(1-x)")
    d1 = alpha_eval(tent19, orbit19, X, 1, 1.0, d=1).value
    h = 1e-5
    fd = (alpha_eval(tent19, orbit19, X, 1, 1 + h).value - alpha_eval(tent19, orbit19, X, 1, 1 - h).value) / (2 * h)
    assert abs(d1 - fd) <= 1e-6
    # at z = 1 the derivative is sum_j j X(c_{1+j}) / (f^j)'(c_1)
    j = np.arange(1, 400)
    explicit = np.sum(j * X(orbit19.points[j]) * orbit19.inv_derivs[j - 1])
    assert d1 == pytest.approx(explicit, abs=1e-10)


def test_alpha_domain(tent19, orbit19):
    with pytest.raises(OutsideDomain):
        alpha_eval(tent19, orbit19, BUMP, 1, 0.5)


def test_horizontality_sums_full_tent(tent2, orbit2):
    assert horizontality_sum(tent2, orbit2, Perturbation.parse("x"), 0).value == pytest.approx(1.0)
    assert horizontality_sum(tent2, orbit2, BUMP, 0).value == pytest.approx(0.0, abs=1e-15)


def test_make_horizontal(tent19, orbit19, horizontal19, acim19):
    X = horizontal19
    assert abs(horizontality_sum(tent19, orbit19, X, 0).value) <= 1e-10
    assert X(np.array([0.0]))[0] == 0
    assert abs(u_eval(tent19, orbit19, X, acim19.s1, 1.0).value) <= 1e-8
    H, res = horizontality_order(tent19, orbit19, X)
    assert H >= 1 and res[0] <= 1e-10
    # a second pass has nothing left to cancel
    again = make_horizontal(tent19, orbit19, X, [Perturbation.parse("x**2*(1-x)")], 1)
    assert max(abs(t) for t in again.coefficients) <= 1e-10


def test_make_horizontal_underdetermined(tent19, orbit19):
    with pytest.raises(SingularSystem):
        make_horizontal(tent19, orbit19, BUMP, [Perturbation.parse("x**2*(1-x)")], 2)


def test_non_horizontal_u_nonzero(tent19, orbit19, acim19):
    assert abs(u_eval(tent19, orbit19, BUMP, acim19.s1, 1.0).value) > 1e-3


def test_v_resummation_matches_v(tent19, orbit19, horizontal19, acim19):
    phi0 = Observable.parse("sin(pi*x)")
    phi = phi0.centered(acim19.mean(phi0(acim19.op.centers)))
    first, second = v_at_one_resummed(tent19, orbit19, horizontal19, phi, acim19.s1)
    V = v_eval(tent19, orbit19, horizontal19, phi, acim19.s1, 1.0)
    assert abs(first.value - V.value) <= 1e-6
    assert abs(second.value - V.value) <= 1e-6


def test_full_tent_v_vanishes(tent2, orbit2):
    assert abs(v_eval(tent2, orbit2, BUMP, CENTERED, -1.0, 1.0).value) <= 1e-15


# ---------------------------------------------------------------- Psi


def test_factorized_and_double_series_agree(tent19, orbit19, acim19):
    X = Perturbation.parse("x**2*(1-x)")
    phi = Observable.parse("cos(pi*x)")
    for z in (0.7, 0.8j, 0.9 * cmath.exp(2.5j)):
        fac = susceptibility_eval(tent19, orbit19, X, phi, acim19, z, route="factorized")
        sing = psi_sing_direct(tent19, orbit19, X, phi, acim19.s1, z)
        assert abs(fac.value - fac.hol - sing.value) <= 1e-9


def test_direct_oracle_full_tent(tent2, orbit2):
    op = build_ulam(tent2, 2**10)
    d = saltus_decomposition(tent2, orbit2, stationary_density(op), op)
    X = Perturbation.parse("x**2*(1-x)")
    phi0 = Observable.parse("cos(pi*x)")
    phi = phi0.centered(d.mean(phi0(op.centers)))
    terms = direct_terms(tent2, X, phi, d.rho_model, op.edges, 14)
    for z in (0.3, -0.3, 0.3j):
        ev = susceptibility_eval(tent2, orbit2, X, phi, d, z)
        dd, _ = susceptibility_direct(tent2, X, phi, None, op.edges, z, 14, terms=terms)
        assert abs(ev.value - dd) <= 1e-4
    zero, _ = susceptibility_direct(tent2, Perturbation.zero(), phi, d.rho_model, op.edges, 0.3, 6)
    assert zero == 0


def test_direct_first_term_refines(tent19, orbit19):
    X = Perturbation.parse("x*(1-x)")
    phi = Observable.parse("sin(pi*x)")
    vals = []
    for N in (2**11, 2**12, 2**13):
        op = build_ulam(tent19, N)
        d = saltus_decomposition(tent19, orbit19, stationary_density(op), op)
        vals.append(direct_terms(tent19, X, phi, d.rho_model, op.edges, 0)[0])
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) or abs(vals[2] - vals[1]) <= 1e-6


def test_outer_side_is_finite(tent19, orbit19, acim19):
    rng = np.random.default_rng(3)
    pre = sample_precritical_orbit(tent19, 4000, rng, density=acim19.density_at)
    phi0 = Observable.parse("x")
    phi = phi0.centered(acim19.mean(phi0(acim19.op.centers)))
    v = susceptibility_eval(tent19, orbit19, BUMP, phi, acim19, 1.02, tol=1e-10, side="outer", pre=pre)
    assert np.isfinite(v.value) and v.tail <= 1e-8
    with pytest.raises(OutsideDomain):
        susceptibility_eval(tent19, orbit19, BUMP, phi, acim19, 1.2, side="outer", pre=pre)


# ---------------------------------------------------------------- tail arithmetic


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 0.995), st.floats(1e-14, 1e-4), st.integers(0, 3))
def test_geometric_K_is_minimal(sup, r, tol, d):
    K = _geometric_K(sup, r, tol, d)
    assert sup * _poly_geometric_tail(r, K, d) <= tol
    if K > 1:
        assert sup * _poly_geometric_tail(r, K - 1, d) > tol
