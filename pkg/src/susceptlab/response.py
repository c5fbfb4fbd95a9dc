"""Linear response: the family ``f_t = f + t X o f`` and three estimates of the derivative of ``int phi d mu_t``."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acim import build_ulam, psi_hol_eval, saltus_decomposition, stationary_density
from .diagnostics import SectorSpec, birkhoff_check, nontangential_limit, nt_value, scalar_evaluator
from .errors import ExpansionViolated, NotFound, NotHorizontal
from .functions import Observable, Perturbation, sup_abs
from .maps import ComposedBranch, PostcriticalOrbit, UnimodalMap, assemble_map, postcritical_orbit, sample_precritical_orbit
from .series import (
    HORIZONTAL_TOL,
    _geometric_K,
    horizontality_order,
    horizontality_sum,
    susceptibility_eval,
    u_eval,
    v_at_one_resummed,
    v_eval,
)


def t_max(m: UnimodalMap, X: Perturbation) -> float:
    """Conservative expansion threshold ``(lam - 1) / (lam sup|X'| + 1)``."""
    dsup = sup_abs(X.d, m.a, m.c1)
    return (m.lam - 1.0) / (m.lam * dsup + 1.0)


def _shift_inverse(X, t):
    """Inverse of ``y -> y + t X(y)`` by fixed-point iteration plus a Newton polish."""

    def inv(v):
        v = np.asarray(v, dtype=float)
        y = v.copy()
        for _ in range(60):
            nxt = v - t * X(y)
            if np.max(np.abs(nxt - y), initial=0.0) <= 1e-16:
                y = nxt
                break
            y = nxt
        return y - (y + t * X(y) - v) / (1.0 + t * X.d(y))

    return inv


@dataclass(frozen=True, eq=False)
class FamilyAtT:
    base: UnimodalMap
    X: Perturbation
    t: float
    map: UnimodalMap


def family_at(m: UnimodalMap, X: Perturbation, t: float) -> FamilyAtT:
    """Validated ``f_t = (id + t X) o f``; same critical point and endpoints as ``f``."""
    t = float(t)
    if t == 0.0:
        return FamilyAtT(m, X, 0.0, m)
    tm = t_max(m, X)
    if abs(t) > tm:
        raise ExpansionViolated(f"|t| = {abs(t)} exceeds the expansion threshold {tm:.6g}")
    outer = lambda y: y + t * X(y)
    outer_d = lambda y: 1.0 + t * X.d(y)
    outer_d2 = lambda y: t * X.d2(y)
    inv = _shift_inverse(X, t)
    left = ComposedBranch(m.left, outer, outer_d, outer_d2, inv)
    right = ComposedBranch(m.right, outer, outer_d, outer_d2, inv)
    ft = assemble_map(left, right, m.a, m.b, m.c, m.spec)
    return FamilyAtT(m, X, t, ft)


def _cell_means(fn, edges, nodes=4):
    """Exact-for-low-degree cell averages of ``fn`` by Gauss-Legendre."""
    g, w = np.polynomial.legendre.leggauss(nodes)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    x = mid[:, None] + half[:, None] * g[None, :]
    return (fn(x) * w[None, :]).sum(axis=1) * 0.5


def expectation(m: UnimodalMap, phi, N: int) -> complex:
    """``int phi d mu`` from the Ulam density on ``N`` cells."""
    op = build_ulam(m, N)
    rho = stationary_density(op)
    return complex(op.integrate(rho * _cell_means(phi, op.edges)))


@dataclass(frozen=True)
class Estimate:
    value: complex
    err: float
    detail: dict = field(default_factory=dict)

    def to_json(self):
        v = complex(self.value)
        return {"value": [v.real, v.imag], "err": float(self.err), **self.detail}


def response_fd(m, X, phi, t0=1e-3, N_grid=(2**13,), workers=1) -> Estimate:
    """4-point central difference of ``t -> int phi d mu_t`` with a 2-point Richardson check.

    The reported error is the larger of the stencil disagreement and the
    change between the last two grid sizes. The acim solves at distinct
    ``(t, N)`` run on ``workers`` threads.
    """
    if abs(2 * t0) > t_max(m, X):
        raise ExpansionViolated(f"stencil reaches t = {2 * t0}, beyond t_max = {t_max(m, X)}")
    jobs = [(N, k) for N in N_grid for k in (-2, -1, 1, 2)]

    def solve(job):
        N, k = job
        return expectation(family_at(m, X, k * t0).map, phi, N)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = dict(zip(jobs, pool.map(solve, jobs)))
    else:
        done = {job: solve(job) for job in jobs}
    results = []
    for N in N_grid:
        F = {k: done[(N, k)] for k in (-2, -1, 1, 2)}
        four = (-F[2] + 8 * F[1] - 8 * F[-1] + F[-2]) / (12 * t0)
        two = (F[1] - F[-1]) / (2 * t0)
        results.append((N, four, two))
    N, four, two = results[-1]
    err = abs(four - two)
    if len(results) > 1:
        err = max(err, abs(four - results[-2][1]))
    detail = {
        "t0": t0,
        "N": [r[0] for r in results],
        "four_point": [[complex(r[1]).real, complex(r[1]).imag] for r in results],
        "two_point": [[complex(r[2]).real, complex(r[2]).imag] for r in results],
    }
    return Estimate(complex(four), float(err), detail)


@dataclass(frozen=True, eq=False)
class AcimParts:
    """Everything needed to evaluate ``Psi_phi`` for one grid size."""

    orbit: PostcriticalOrbit
    density: object
    phi_grid: np.ndarray


def acim_parts(m, phi, N, orbit=None, K=200_000):
    if orbit is None:
        orbit = postcritical_orbit(m, K)
    op = build_ulam(m, N)
    rho = stationary_density(op)
    dens = saltus_decomposition(m, orbit, rho, op)
    return AcimParts(orbit, dens, phi(op.centers))


def formula_value(m, X, phi, parts: AcimParts, tol=1e-12):
    """``V_phi(1) + Psi_hol(1)`` with the pieces."""
    s1 = parts.density.s1
    V = v_eval(m, parts.orbit, X, phi, s1, 1.0, tol)
    hol = psi_hol_eval(parts.density, X, X.d, parts.phi_grid, 1.0)
    return V, hol


def response_formula(m, X, phi, parts: AcimParts, coarse: Optional[AcimParts] = None, tol=1e-12) -> Estimate:
    """``V_phi(1) + Psi_hol(1)``; error from the comparison with a coarser grid when given."""
    h0 = horizontality_sum(m, parts.orbit, X, 0)
    if abs(h0.value) > HORIZONTAL_TOL:
        raise NotHorizontal(f"horizontality sum {abs(h0.value):.3g} exceeds {HORIZONTAL_TOL}")
    V, hol = formula_value(m, X, phi, parts, tol)
    first, second = v_at_one_resummed(m, parts.orbit, X, phi, parts.density.s1, tol)
    value = V.value + hol
    err = V.tail
    detail = {"V1": [V.value.real, V.value.imag], "hol1": [complex(hol).real, complex(hol).imag],
              "V1_resummed": [first.value.real, first.value.imag],
              "resummation_gap": abs(first.value - V.value)}
    if coarse is not None:
        Vc, holc = formula_value(m, X, phi, coarse, tol)
        err += abs((Vc.value + holc) - value)
        detail["coarse_value"] = [complex(Vc.value + holc).real, complex(Vc.value + holc).imag]
    return Estimate(complex(value), float(err), detail)


# ---------------------------------------------------------------- report

BIRKHOFF_FUNCTIONS = ("x", "x**2", "sin(pi*x)", "cos(pi*x)")


@dataclass(frozen=True)
class ResponseConfig:
    N: int = 2**13
    N_coarse: int = 2**12
    t0: float = 1e-3
    j_min: int = 5
    j_max: int = 14
    orbit_length: int = 10**6
    tol: float = 1e-9
    birkhoff_tol: float = 0.05
    birkhoff_m: int = 10**4
    seed: int = 0
    max_orbit_tries: int = 8
    workers: int = 1


def _pair(v):
    v = complex(v)
    return [v.real, v.imag]


def birkhoff_typical_precritical(m, density, depth, cfg: ResponseConfig):
    """First sampled precritical orbit whose ergodic averages pass ``birkhoff_check``.

    Branches are drawn with the density-weighted rule, seeds ``cfg.seed, cfg.seed + 1, ...``.
    """
    depth = max(depth, cfg.birkhoff_m)  # deeper than the series needs is harmless
    fns = [Observable.parse(t) for t in BIRKHOFF_FUNCTIONS]
    means = [density.mean(g(density.op.centers)) for g in fns]
    for attempt in range(cfg.max_orbit_tries):
        rng = np.random.default_rng(cfg.seed + attempt)
        pre = sample_precritical_orbit(m, depth, rng, density=density.density_at)
        ok, worst = birkhoff_check(pre.points, fns, means, min(1000, cfg.birkhoff_m), cfg.birkhoff_m, cfg.birkhoff_tol)
        if ok:
            return pre, {"seed": cfg.seed + attempt, "worst_deviation": worst, "functions": list(BIRKHOFF_FUNCTIONS)}
    raise NotFound(f"no sampled precritical orbit passed the Birkhoff check in {cfg.max_orbit_tries} tries")


def _outer_depth(cfg, sup):
    q = 1 - 2.0 ** -cfg.j_max  # 1 / |z| at the outermost sample
    return _geometric_K(sup, q, cfg.tol) + 16


def response_report(m: UnimodalMap, X: Perturbation, phi: Observable, cfg: ResponseConfig = ResponseConfig()):
    """Finite difference, formula, and inner/outer NT limits of ``Psi_phi`` at ``z = 1``.

    ``phi`` is centred with the grid mean at ``cfg.N``. The formula column
    is suppressed (``None``) when ``X`` is not horizontal. Errors of the
    formula and NT columns include the change from ``cfg.N_coarse``.
    """
    orbit = postcritical_orbit(m, cfg.orbit_length)
    order, residuals = horizontality_order(m, orbit, X)
    op = build_ulam(m, cfg.N)
    rho = stationary_density(op)
    dens = saltus_decomposition(m, orbit, rho, op)
    phic = phi if phi.normalized else phi.centered(dens.mean(phi(op.centers)))
    parts = AcimParts(orbit, dens, phic(op.centers))
    op_c = build_ulam(m, cfg.N_coarse)
    rho_c = stationary_density(op_c)
    dens_c = saltus_decomposition(m, orbit, rho_c, op_c)
    phic_c = phi if phi.normalized else phi.centered(dens_c.mean(phi(op_c.centers)))
    parts_c = AcimParts(orbit, dens_c, phic_c(op_c.centers))

    fd = response_fd(m, X, phic, cfg.t0, (cfg.N_coarse, cfg.N), cfg.workers)
    U1 = u_eval(m, orbit, X, dens.s1, 1.0).value
    out = {
        "fd": {"value": _pair(fd.value), "err": fd.err, **{k: v for k, v in fd.detail.items()}},
        "horizontality": {"order": int(order), "residuals": list(residuals)},
        "U1": _pair(U1),
        "s1": dens.s1,
        "phi_mean": _pair(phic.mean),
    }
    horizontal = order >= 1
    if horizontal:
        f = response_formula(m, X, phic, parts, coarse=parts_c, tol=cfg.tol)
        out["formula"] = {"value": _pair(f.value), "err": f.err, **f.detail}
    else:
        out["formula"] = None

    def side_limit(side, pre=None):
        sector = SectorSpec(0.0, j_min=cfg.j_min, j_max=cfg.j_max, side=side)

        def at(d, ph, z):
            return susceptibility_eval(m, orbit, X, ph, d, z, cfg.tol, side=side, pre=pre)

        rep = nontangential_limit(scalar_evaluator(lambda z: at(dens, phic, z)), sector)
        lim, extrap = nt_value(rep)
        # Psi - lim = (W(z) - W(1)) - U sigma with W = V + hol smooth at 1,
        # so the last two samples bound the remainder directly.
        pts = sector.points()
        last, prev = at(dens, phic, pts[-1]), at(dens, phic, pts[-2])
        structural = last.tail
        if last.U is not None:
            W_last = last.V.value + last.hol
            W_prev = prev.V.value + prev.hol
            structural += abs(last.U.value * last.sigma.value) + abs(W_last - W_prev)
        grid = abs(at(dens_c, phic_c, pts[-1]).value - lim)
        return {"value": _pair(lim), "err": max(extrap, structural) + grid, "verdict": rep.verdict,
                "extrapolation_err": extrap, "structural_err": structural, "grid_err": grid,
                "samples": [[int(j), *_pair(v)] for j, v in zip(sector.js, rep.values)]}

    out["nt_inner"] = side_limit("inner")
    sup_phi = float(np.max(np.abs(phic(np.linspace(m.c2, m.c1, 4097)))))
    pre, info = birkhoff_typical_precritical(m, dens, _outer_depth(cfg, sup_phi), cfg)
    out["nt_outer"] = side_limit("outer", pre)
    out["nt_outer"]["precritical"] = info
    if not horizontal:
        # the Abelian limit is open without horizontality: report the sequence only
        out["nt_inner"]["verdict"] = out["nt_outer"]["verdict"] = None
    out["consistency"] = consistency(out)
    return out


def consistency(report):
    """Pairwise agreement within summed errors, and the relative spread of the columns present."""
    cols = {k: report[k] for k in ("fd", "formula", "nt_inner", "nt_outer") if report.get(k)}
    vals = {k: complex(*v["value"]) for k, v in cols.items()}
    pairs = {}
    names = sorted(cols)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            gap = abs(vals[a] - vals[b])
            pairs[f"{a}~{b}"] = {"gap": gap, "allowed": cols[a]["err"] + cols[b]["err"],
                                 "ok": bool(gap <= cols[a]["err"] + cols[b]["err"])}
    arr = np.array(list(vals.values()))
    scale = abs(np.mean(arr))
    spread = float((np.max(arr.real) - np.min(arr.real)) / scale) if scale > 0 else 0.0
    return {"pairs": pairs, "relative_spread": spread}
