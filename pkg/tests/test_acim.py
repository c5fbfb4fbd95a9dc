import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_tent_s1
from susceptlab.acim import (
    build_ulam,
    centered_derivative,
    cell_heaviside,
    hol_source,
    jump_count,
    neumann_series,
    psi_hol_eval,
    resolvent_solve,
    saltus_decomposition,
    stationary_density,
)
from susceptlab.errors import MeanNotZero, NotStochastic
from susceptlab.functions import Observable, Perturbation
from susceptlab.maps import MapSpec, build_map, postcritical_orbit


@settings(max_examples=25, deadline=None)
@given(st.floats(1.05, 2.0), st.integers(16, 600))
def test_columns_are_stochastic(slope, N):
    op = build_ulam(build_map(MapSpec("tent", {"slope": slope})), N)
    np.testing.assert_allclose(op.column_sums(), 1.0, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.85, 1.0), st.floats(0.3, 0.7), st.integers(16, 400))
def test_skewed_columns_are_stochastic(h, c, N):
    if min(h / c, h / (1 - c)) <= 1.05:
        return
    op = build_ulam(build_map(MapSpec("skewed-tent", {"height": h, "c": c})), N)
    np.testing.assert_allclose(op.column_sums(), 1.0, atol=1e-12)


def test_polynomial_columns_are_stochastic(poly_map):
    np.testing.assert_allclose(build_ulam(poly_map, 512).column_sums(), 1.0, atol=1e-12)


@pytest.mark.parametrize("N", [64, 1000, 4096])
def test_full_tent_fixes_uniform(tent2, N):
    op = build_ulam(tent2, N)
    assert op.l1(op.apply(np.ones(N)) - 1.0) <= 1e-12
    assert op.l1(stationary_density(op) - 1.0) <= 1e-10


def test_tent19_density_support_and_refinement(tent19):
    rhos = {}
    for k in range(10, 15):
        op = build_ulam(tent19, 2**k)
        rho = stationary_density(op)
        assert rho.min() >= -1e-12
        # the cell holding c1 maps across c2, so allow a few cells of Ulam leakage
        margin = 3 * op.h
        outside = (op.edges[1:] <= tent19.c2 - margin) | (op.edges[:-1] >= tent19.c1 + margin)
        assert np.max(np.abs(rho[outside])) <= 1e-9
        rhos[k] = (op, rho)

    ref_op = build_ulam(tent19, 2**16)
    ref = stationary_density(ref_op)
    gaps = [op.l1(rho - ref.reshape(op.N, -1).mean(axis=1)) for op, rho in rhos.values()]
    assert all(b < a for a, b in zip(gaps, gaps[1:])), gaps
    assert gaps[-1] <= 1e-3


def test_non_stochastic_input_flagged(tent19):
    op = build_ulam(tent19, 256)
    M = op.matrix.tolil()
    M[:, 7] = M[:, 7] * 1.5
    bad = dataclasses.replace(op, matrix=M.tocsc())
    with pytest.raises(NotStochastic):
        stationary_density(bad)


def test_full_tent_saltus(acim2):
    d = acim2
    assert d.s1 == pytest.approx(-1.0, abs=1e-12)
    np.testing.assert_allclose(d.jumps[:4], [-1.0, 0.5, 0.25, 0.125])
    assert np.max(np.abs(d.rho_reg)) <= 1e-6
    assert d.s1_extrapolated == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("slope", [1.6, 1.9])
def test_tent_s1_matches_normalisation_oracle(slope):
    m = build_map(MapSpec("tent", {"slope": slope}))
    orbit = postcritical_orbit(m, 2000)
    op = build_ulam(m, 2**13)
    d = saltus_decomposition(m, orbit, stationary_density(op), op)
    assert d.s1 == pytest.approx(exact_tent_s1(slope), rel=1e-6)
    assert d.s1_extrapolated == pytest.approx(exact_tent_s1(slope), rel=2e-2)
    # for tent maps the density is a pure jump series
    assert op.l1(d.rho_reg) <= 1e-6


def test_jump_bounds_and_count(acim19, tent19):
    d = acim19
    n = np.arange(1, len(d.jumps) + 1)
    assert np.all(np.abs(d.jumps) <= abs(d.s1) * tent19.lam ** -(n - 1) * (1 + 1e-12))
    expected = math.ceil(1 + math.log(abs(d.s1) / 1e-8) / math.log(tent19.lam))
    assert abs(jump_count(d.s1, tent19.lam, 1e-8) - expected) <= 2


def test_nonlinear_map_decomposition(poly_map):
    orbit = postcritical_orbit(poly_map, 20_000)
    runs = []
    for k in (12, 13, 14):
        op = build_ulam(poly_map, 2**k)
        runs.append(saltus_decomposition(poly_map, orbit, stationary_density(op), op))
    residuals = [d.reg_residual for d in runs]
    assert all(b < a for a, b in zip(residuals, residuals[1:])), residuals
    assert abs(runs[-1].s1 - runs[-2].s1) <= 1e-6
    assert runs[-1].s1_extrapolated == pytest.approx(runs[-1].s1, abs=1e-3)


def test_resolvent_identity_and_neumann(acim19):
    op = acim19.op
    g = np.sin(3 * op.centers)
    assert np.array_equal(resolvent_solve(op, 0, g).u, g)
    for z in (0.5, -0.5j):
        u = resolvent_solve(op, z, g).u
        assert op.l1(u - neumann_series(op, z, g, 60)) <= 1e-9


def test_deflated_solve_is_limit(acim19):
    op, rho = acim19.op, acim19.rho
    g = np.cos(5 * op.centers) * rho
    g = g - rho * op.integrate(g)
    u1 = resolvent_solve(op, 1.0, g, rho=rho).u
    gaps = []
    for j in range(2, 6):
        uj = resolvent_solve(op, 1 - 10.0**-j, g, rho=rho).u
        uj = uj - rho * op.integrate(uj)
        gaps.append(op.l1(uj - u1))
    assert gaps[-1] <= 1e-3 and all(b < a for a, b in zip(gaps, gaps[1:]))
    with pytest.raises(MeanNotZero):
        resolvent_solve(op, 1.0, rho, rho=rho)


def test_full_tent_hol_source_is_saltus_only(acim2):
    X = Perturbation.parse("x*(1-x)")
    g = hol_source(acim2, X, X.d)
    np.testing.assert_allclose(g, X.d(acim2.op.centers) * acim2.rho_sal, atol=1e-6)


def test_hol_at_zero_refinement(tent19, orbit19):
    X = Perturbation.parse("x*(1-x)")
    phi = Observable.parse("sin(pi*x)")
    vals = []
    for N in (2**12, 2**13):
        op = build_ulam(tent19, N)
        d = saltus_decomposition(tent19, orbit19, stationary_density(op), op)
        vals.append(psi_hol_eval(d, X, X.d, phi(op.centers), 0.0))
    assert abs(vals[0] - vals[1]) <= 1e-3 * max(1.0, abs(vals[1]))


def test_hol_finite_outside_unit_circle(tent19, orbit19):
    X = Perturbation.parse("x*(1-x)")
    phi = Observable.parse("x")
    zs = 1.05 * np.exp(2j * np.pi * np.arange(16) / 16)
    res = []
    for N in (2**11, 2**12):
        op = build_ulam(tent19, N)
        d = saltus_decomposition(tent19, orbit19, stationary_density(op), op)
        ph = phi.centered(d.mean(phi(op.centers)))(op.centers)
        res.append(np.array([psi_hol_eval(d, X, X.d, ph, z) for z in zs]))
    assert np.all(np.isfinite(res[1]))
    assert np.max(np.abs(res[0] - res[1])) <= 0.05 * np.max(np.abs(res[1]))


def test_centered_derivative_exact_on_quadratics():
    x = np.linspace(0, 1, 101)
    h = x[1] - x[0]
    np.testing.assert_allclose(centered_derivative(x**2, h)[1:-1], 2 * x[1:-1], atol=1e-12)


def test_cell_heaviside_partial_cell(tent2):
    op = build_ulam(tent2, 16)
    expected = np.zeros(16)
    expected[10:] = 1.0
    expected[9] = (10 / 16 - 0.6) * 16
    np.testing.assert_allclose(cell_heaviside(op, 0.6), expected, atol=1e-12)
