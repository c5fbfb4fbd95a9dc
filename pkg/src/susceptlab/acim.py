"""Invariant density via Ulam's method, saltus decomposition, and resolvent terms.

Densities are stored as cell averages on a uniform grid of ``N`` cells
over ``[a, b]``. The Ulam matrix ``L`` acts on such vectors and is
column-stochastic: ``L[i, j]`` is the fraction of cell ``j`` mapped into
cell ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MeanNotZero, NearSingular, NoConvergence, NotStochastic, OrbitTooShort
from .maps import PostcriticalOrbit, UnimodalMap

DEFLATION_RADIUS = 0.1
STATIONARY_TOL = 1e-10
SOLVE_TOL = 1e-8
MEAN_TOL = 1e-8
STOCHASTIC_TOL = 1e-10
JUMP_TERMS_MIN = 60


@dataclass(frozen=True, eq=False)
class UlamOperator:
    N: int
    a: float
    b: float
    matrix: sp.csc_matrix

    @property
    def h(self):
        return (self.b - self.a) / self.N

    @property
    def edges(self):
        return np.linspace(self.a, self.b, self.N + 1)

    @property
    def centers(self):
        return self.a + (np.arange(self.N) + 0.5) * self.h

    def integrate(self, v):
        return self.h * np.sum(v)

    def l1(self, v):
        return self.h * np.sum(np.abs(v))

    def apply(self, v):
        return self.matrix @ v

    def column_sums(self):
        return np.asarray(self.matrix.sum(axis=0)).ravel()


def _branch_entries(branch, a, h, N, lo_idx, hi_idx):
    """Ulam entries contributed by one monotone branch.

    Source cells are clipped to the branch domain; each image interval is
    split at target cell edges and the pieces are pulled back exactly
    through the branch inverse.
    """
    edges = a + np.arange(N + 1) * h
    cols = np.arange(lo_idx, hi_idx)
    x0 = np.maximum(edges[cols], branch.lo)
    x1 = np.minimum(edges[cols + 1], branch.hi)
    keep = x1 > x0
    cols, x0, x1 = cols[keep], x0[keep], x1[keep]
    y0, y1 = branch.f(x0), branch.f(x1)
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    ilo = np.clip(np.floor((ylo - a) / h).astype(np.int64), 0, N - 1)
    ihi = np.clip(np.ceil((yhi - a) / h).astype(np.int64) - 1, 0, N - 1)
    ihi = np.maximum(ihi, ilo)
    counts = ihi - ilo + 1
    rep = np.repeat(np.arange(len(cols)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    rows = ilo[rep] + offs
    lo_y = np.maximum(ylo[rep], edges[rows])
    hi_y = np.minimum(yhi[rep], edges[rows + 1])
    # first / last target cells absorb images that stick out of [a, b] by roundoff
    lo_y = np.where(rows == 0, ylo[rep], lo_y)
    hi_y = np.where(rows == N - 1, yhi[rep], hi_y)
    pos = hi_y > lo_y
    rows, rep, lo_y, hi_y = rows[pos], rep[pos], lo_y[pos], hi_y[pos]
    full = (lo_y <= ylo[rep]) & (hi_y >= yhi[rep])
    xa = branch.inv(lo_y)
    xb = branch.inv(hi_y)
    length = np.abs(xb - xa)
    length = np.where(full, x1[rep] - x0[rep], length)
    return rows, cols[rep], length / h


def build_ulam(m: UnimodalMap, N: int) -> UlamOperator:
    """Ulam discretisation of the transfer operator on ``N`` uniform cells."""
    if N < 16:
        raise ValueError("N must be at least 16")
    a, b = m.a, m.b
    h = (b - a) / N
    ic = min(int(math.floor((m.c - a) / h)), N - 1)
    rl, cl, vl = _branch_entries(m.left, a, h, N, 0, ic + 1)
    rr, cr, vr = _branch_entries(m.right, a, h, N, ic, N)
    rows = np.concatenate([rl, rr])
    cols = np.concatenate([cl, cr])
    vals = np.concatenate([vl, vr])
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(N, N))
    mat.sum_duplicates()
    # exact pull-backs leave ~1e-16 defects per column; renormalise so mass is conserved
    sums = np.asarray(mat.sum(axis=0)).ravel()
    mat = mat @ sp.diags(1.0 / sums)
    return UlamOperator(N, a, b, sp.csc_matrix(mat))


def stationary_density(op: UlamOperator, tol=STATIONARY_TOL, max_iter=100_000, start=None):
    """Fixed vector of the Ulam matrix with unit integral, by power iteration.

    A matrix that is not column-stochastic (within ``STOCHASTIC_TOL``) is
    rejected before iterating: its Perron vector would not be a density.
    """
    drift = float(np.max(np.abs(op.column_sums() - 1.0)))
    if drift > STOCHASTIC_TOL:
        raise NotStochastic(f"column sums deviate from 1 by {drift:.3g}")
    L = op.matrix
    rho = np.ones(op.N) if start is None else np.asarray(start, dtype=float).copy()
    rho /= op.integrate(rho)
    res = np.inf
    for it in range(1, max_iter + 1):
        nxt = L @ rho
        mass = op.integrate(nxt)
        if not np.isfinite(mass) or mass <= 0:
            raise NoConvergence(it, res)
        nxt /= mass
        res = op.l1(nxt - rho)
        rho = nxt
        if res <= tol * 0.1:
            break
    final = op.l1(L @ rho - rho)
    if not final <= tol:
        raise NoConvergence(max_iter if res > tol * 0.1 else it, final)
    return rho


def cell_heaviside(op: UlamOperator, x):
    """Cell averages of ``H_x(y) = 1[y >= x]``."""
    edges = op.edges
    frac = (edges[1:] - np.clip(x, edges[:-1], edges[1:])) / op.h
    return frac


@dataclass(frozen=True, eq=False)
class AcimDensity:
    """Grid density plus its split into jumps along the postcritical orbit and a regular part.

    ``s1`` is the jump used downstream. ``s1_extrapolated`` is the value read
    off the grid by one-sided extrapolation at ``c_1``. ``reg_residual`` is
    the L1 gap between ``rho`` and ``rho_sal + rho_reg``, which measures the
    Ulam smearing of the jumps in ``rho``.
    """

    op: UlamOperator
    rho: np.ndarray
    s1: float
    jump_locations: np.ndarray  # c_1 .. c_{N_s}
    jumps: np.ndarray  # s_1 .. s_{N_s}
    rho_sal: np.ndarray
    rho_reg: np.ndarray
    tail_bound: float
    eps: float
    s1_extrapolated: float = float("nan")
    reg_residual: float = 0.0
    method: str = "consistent"

    @property
    def rho_model(self):
        return self.rho_sal + self.rho_reg

    @property
    def n_jumps(self):
        return len(self.jumps)

    def density_at(self, x):
        """Piecewise-constant evaluation of the grid density."""
        idx = np.clip(((np.asarray(x) - self.op.a) / self.op.h).astype(np.int64), 0, self.op.N - 1)
        return self.rho[idx]

    def mean(self, values_at_centers):
        return self.op.integrate(values_at_centers * self.rho)


def _one_sided_limit(op: UlamOperator, rho, x, cells=8):
    """Left limit of the grid density at ``x`` from a quadratic fit to cell averages.

    The design matrix uses exact cell averages of ``1, t, t^2`` so that a
    quadratic density is reproduced exactly.
    """
    k = min(int(math.floor((x - op.a) / op.h)), op.N)  # cells 0..k-1 lie left of x
    idx = np.arange(max(k - cells, 0), k)
    if len(idx) < 3:
        raise OrbitTooShort("not enough cells left of c_1 for extrapolation")
    left = op.a + idx * op.h - x
    right = left + op.h
    design = np.stack(
        [np.ones_like(left), 0.5 * (left + right), (left**2 + left * right + right**2) / 3.0],
        axis=1,
    )
    coef, *_ = np.linalg.lstsq(design, rho[idx], rcond=None)
    return float(coef[0])


def jump_count(s1, lam, eps):
    """Smallest ``N_s`` with ``|s_1| sum_{n > N_s} lam^{-(n-1)} <= eps``."""
    if s1 == 0:
        return 1
    q = 1.0 / lam
    n = 1
    while abs(s1) * q**n / (1.0 - q) > eps:
        n += 1
    return n


def transfer_heaviside(m: UnimodalMap, op: UlamOperator, x):
    """Exact cell averages of ``L H_x``: preimage length of each cell inside ``[x, b]``."""
    e = op.edges
    out = np.zeros(op.N)
    for br in (m.left, m.right):
        ends = br.f(np.array([br.lo, br.hi], dtype=float))
        ylo, yhi = float(ends.min()), float(ends.max())
        e0 = np.clip(e[:-1], ylo, yhi)
        e1 = np.clip(e[1:], ylo, yhi)
        live = e1 > e0
        u = br.inv(e0)
        v = br.inv(e1)
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        out += np.where(live, np.maximum(0.0, hi - np.maximum(lo, x)), 0.0)
    return out / op.h


def _consistent_s1(m, op, rho, locs, weights):
    """Jump ``s_1`` and regular part from the fixed-point equation of ``rho_reg``.

    Writing ``rho = s_1 S + rho_reg`` with ``S = sum_n H_{c_n} / D_{n-1}``
    gives ``(1 - L) rho_reg = s_1 (L S - S)``. On the grid the solution is
    ``s_1 A + beta rho_N`` with ``A`` the mean-zero particular solution.
    Normalisation fixes ``beta`` and the jump condition at ``c_1``
    (``s_1 = -rho(c) sum 1/|f'(c+-)|``) fixes ``s_1``. The Ulam smearing
    created at the fold is propagated identically in both pieces, so it
    cancels in ``rho_reg``; for piecewise-linear maps ``rho_reg`` is zero
    to rounding.
    """
    S = np.zeros(op.N)
    LS = np.zeros(op.N)
    for x, w in zip(locs, weights):
        S += w * cell_heaviside(op, x)
        LS += w * transfer_heaviside(m, op, x)
    q = LS - S
    B = _bordered(op, 1.0, rho)
    A = spla.splu(B).solve(np.concatenate([q, [0.0]]).astype(complex))[:-1].real
    c = np.array([m.c])
    kappa = 1.0 / abs(float(m.left.df(c)[0])) + 1.0 / abs(float(m.right.df(c)[0]))
    Sc = float(np.sum(weights * (m.c >= locs)))
    Ac = float(np.interp(m.c, op.centers, A))
    rc = float(np.interp(m.c, op.centers, rho))
    IS = float(op.integrate(S))
    denom = 1.0 + kappa * (Sc + Ac - IS * rc)
    if abs(denom) < 1e-12:
        raise NearSingular("jump condition at c_1 is degenerate")
    s1 = -kappa * rc / denom
    beta = 1.0 - s1 * IS
    return s1, s1 * A + beta * np.asarray(rho)


def saltus_decomposition(m: UnimodalMap, orbit: PostcriticalOrbit, rho, op: UlamOperator, eps=1e-8,
                         method="consistent"):
    """Split ``rho`` into ``sum_n s_n H_{c_n}`` plus a regular remainder.

    ``method="extrapolated"`` takes ``s_1`` from the one-sided limit at
    ``c_1`` and sets ``rho_reg = rho - rho_sal``. The default solves for
    ``s_1`` and ``rho_reg`` together (see ``_consistent_s1``), which keeps
    the smeared jumps of ``rho`` out of ``rho_reg``.
    """
    s1_ex = -_one_sided_limit(op, rho, m.c1)
    if method == "consistent":
        n_w = max(jump_count(s1_ex, m.lam, 1e-3 * eps), JUMP_TERMS_MIN)
        if n_w > len(orbit):
            raise OrbitTooShort(f"need {n_w} postcritical points, have {len(orbit)}")
        s1, reg = _consistent_s1(m, op, rho, orbit.points[:n_w], orbit.weights(n_w - 1))
    elif method == "extrapolated":
        s1, reg = s1_ex, None
    else:
        raise ValueError(f"unknown decomposition method {method!r}")
    n_s = jump_count(s1, m.lam, eps)
    if n_s > len(orbit):
        raise OrbitTooShort(f"need {n_s} postcritical points, have {len(orbit)}")
    locs = orbit.points[:n_s]
    fp = m.deriv(locs[:-1])
    jumps = np.empty(n_s)
    jumps[0] = s1
    for k in range(1, n_s):
        jumps[k] = jumps[k - 1] / fp[k - 1]
    rho_sal = np.zeros(op.N)
    for loc, s in zip(locs, jumps):
        rho_sal += s * cell_heaviside(op, loc)
    q = 1.0 / m.lam
    tail = abs(s1) * q**n_s / (1.0 - q)
    if reg is None:
        reg = np.asarray(rho) - rho_sal
    return AcimDensity(op, np.asarray(rho), float(s1), locs, jumps, rho_sal, reg, tail, eps,
                       float(s1_ex), float(op.l1(np.asarray(rho) - rho_sal - reg)), method)


@dataclass(frozen=True)
class ResolventSolution:
    u: np.ndarray
    deflated: bool
    residual: float


def _bordered(op: UlamOperator, z, rho):
    N = op.N
    A = sp.identity(N, dtype=complex, format="csc") - z * op.matrix.astype(complex)
    col = sp.csc_matrix(np.asarray(rho, dtype=complex).reshape(-1, 1))
    row = sp.csc_matrix(np.full((1, N), op.h, dtype=complex))
    return sp.bmat([[A, col], [row, None]], format="csc")


def resolvent_solve(op: UlamOperator, z, g, rho=None) -> ResolventSolution:
    """Solve ``(Id - z L) u = g``.

    Within ``DEFLATION_RADIUS`` of ``z = 1`` the eigenvalue 1 is deflated:
    ``g`` must have zero integral and ``u`` is taken in the mean-zero
    complement. The stationary density ``rho`` is needed for deflation.
    """
    z = complex(z)
    g = np.asarray(g, dtype=complex)
    if z == 0:
        return ResolventSolution(g.copy(), False, 0.0)
    deflate = abs(z - 1) < DEFLATION_RADIUS
    if deflate:
        if rho is None:
            raise ValueError("deflated solve needs the stationary density")
        mean = op.integrate(g)
        if abs(mean) > MEAN_TOL:
            raise MeanNotZero(f"integral of right-hand side is {mean}")
        B = _bordered(op, z, rho)
        sol = spla.splu(B).solve(np.concatenate([g, [0.0]]))
        u = sol[:-1]
    else:
        A = sp.identity(op.N, dtype=complex, format="csc") - z * op.matrix.astype(complex)
        u = spla.splu(A).solve(g)
    res_vec = u - z * (op.matrix @ u) - g
    residual = op.l1(res_vec)
    scale = max(op.l1(g), 1.0)
    if not residual <= SOLVE_TOL * scale:
        raise NearSingular(f"resolvent residual {residual} at z={z}")
    return ResolventSolution(u, deflate, residual)


def neumann_series(op: UlamOperator, z, g, terms):
    """Partial sum ``sum_{k<terms} z^k L^k g`` (oracle for the resolvent)."""
    acc = np.zeros(op.N, dtype=complex)
    v = np.asarray(g, dtype=complex)
    zk = 1.0 + 0j
    for _ in range(terms):
        acc += zk * v
        v = op.matrix @ v
        zk *= z
    return acc


def centered_derivative(values, h):
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2 * h)
    d[0] = (values[1] - values[0]) / h
    d[-1] = (values[-1] - values[-2]) / h
    return d


def hol_source(density: AcimDensity, X, dX):
    """Grid version of ``X' rho_sal + (X rho_reg)'``."""
    op = density.op
    x = op.centers
    return dX(x) * density.rho_sal + centered_derivative(X(x) * density.rho_reg, op.h)


def psi_hol_eval(density: AcimDensity, X, dX, phi_values, z, project=None):
    """``-int (1 - zL)^{-1} (X' rho_sal + (X rho_reg)') phi dx`` on the grid.

    ``phi_values`` are the observable at cell centres. Near ``z = 1`` (or
    when ``project`` is true) the source is projected onto the mean-zero
    complement, which leaves the value unchanged when ``phi`` has zero
    mean under the grid density.
    """
    op = density.op
    g = hol_source(density, X, dX)
    if project is None:
        project = abs(complex(z) - 1) < DEFLATION_RADIUS
    if project:
        g = g - density.rho * op.integrate(g)
    sol = resolvent_solve(op, z, g, rho=density.rho)
    return -op.integrate(sol.u * phi_values)
