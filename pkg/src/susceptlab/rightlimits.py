"""Finite windows of right limits of the postcritical sequence.

A right limit is an infinite-subsequence object; here every verdict is
about a finite window ``b_{-W} .. b_W`` together with the gaps that show
how far the window has settled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DepthBudgetExceeded, NotFound
from .maps import LEFT, RIGHT, PostcriticalOrbit, PrecriticalOrbit, UnimodalMap, inverse_step

RECOMPOSE_MAX_DEPTH = 20
RECOMPOSE_TOL = 1e-10
ORBIT_TOL = 1e-9
MAX_PREIMAGES = 10**6


@dataclass(frozen=True, eq=False)
class RightLimitWindow:
    """``values[n + W] = b_n`` for ``|n| <= W`` with per-entry gaps.

    ``centers`` are the indices ``k_j`` (``b_n ~ c_{n + k_j + 1}``); glued
    windows have no centers and zero gaps.
    """

    values: np.ndarray
    gaps: np.ndarray
    W: int
    centers: tuple = ()

    def b(self, n):
        if abs(n) > self.W:
            raise IndexError(f"index {n} outside window of half-width {self.W}")
        return self.values[n + self.W]

    def gap(self, n):
        return self.gaps[n + self.W]

    @property
    def ns(self):
        return np.arange(-self.W, self.W + 1)

    def perturbed(self, n, delta):
        vals = self.values.copy()
        vals[n + self.W] += delta
        return RightLimitWindow(vals, self.gaps.copy(), self.W, self.centers)

    def to_json(self):
        return {"W": self.W, "centers": [int(k) for k in self.centers],
                "values": [float(v) for v in self.values], "gaps": [float(g) for g in self.gaps]}


def window_from_centers(orbit: PostcriticalOrbit, centers, W) -> RightLimitWindow:
    """Window of ``a_k = c_{k+1}`` around the last center; gaps from the last two."""
    centers = [int(k) for k in centers]
    if len(centers) < 2:
        raise ValueError("need at least two centers to report gaps")
    if any(np.diff(centers) <= 0):
        raise ValueError("centers must increase")
    if centers[0] < W or centers[-1] + W >= len(orbit):
        raise ValueError("window does not fit inside the orbit prefix")
    pts = orbit.points
    ns = np.arange(-W, W + 1)
    last = pts[centers[-1] + ns]
    prev = pts[centers[-2] + ns]
    return RightLimitWindow(last.copy(), np.abs(last - prev), W, tuple(centers))


def glue(pre: PrecriticalOrbit, orbit: PostcriticalOrbit, W) -> RightLimitWindow:
    """Renascent window: ``b_n = c_{n+1}`` for ``n >= 0`` and ``b_n = y_n`` for ``n <= -1``."""
    if W > len(pre) or W + 1 > len(orbit):
        raise ValueError("orbits too short for the requested window")
    neg = pre.points[:W][::-1]  # y_{-W} .. y_{-1}
    pos = orbit.points[: W + 1]  # c_1 .. c_{W+1}
    vals = np.concatenate([neg, pos])
    return RightLimitWindow(vals, np.zeros_like(vals), W)


@dataclass(frozen=True)
class OrbitVerdict:
    passed: bool
    violations: tuple  # indices n with |b_{n+1} - f(b_n)| above tolerance
    worst: float


def complete_orbit_check(m: UnimodalMap, window: RightLimitWindow, tol=ORBIT_TOL) -> OrbitVerdict:
    """Check ``b_{n+1} = f(b_n)`` within ``max(gap_n, tol)`` for ``-W <= n < W``."""
    b = window.values
    err = np.abs(b[1:] - m(b[:-1]))
    allowed = np.maximum(window.gaps[:-1], tol)
    bad = np.nonzero(err > allowed)[0]
    return OrbitVerdict(len(bad) == 0, tuple(int(i) - window.W for i in bad), float(err.max(initial=0.0)))


# ---------------------------------------------------------------- precritical trees


@dataclass(frozen=True, eq=False)
class PrecriticalTree:
    M: int
    orbits: tuple  # PrecriticalOrbit, each with M + 1 points
    counts: tuple  # surviving strings per depth 0..M
    truncated: bool
    cap: int

    @property
    def meets_bound(self):
        """Count at depth ``M`` reaches ``min(cap, 2^{floor(M/2)})``."""
        return self.counts[-1] >= min(self.cap, 2 ** (self.M // 2))


def enumerate_precritical(m: UnimodalMap, M: int, cap: int = 4096) -> PrecriticalTree:
    """Breadth-first enumeration of ``M`` inverse-branch steps from ``c`` inside ``[c_2, c_1]``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    frontier = [((), (m.c,))]
    counts = [1]
    truncated = False
    for _ in range(M):
        nxt = []
        for bits, pts in frontier:
            for side in (LEFT, RIGHT):
                x = inverse_step(m, pts[-1], side)
                if x is not None:
                    nxt.append((bits + (side,), pts + (x,)))
        counts.append(len(nxt))
        if len(nxt) > cap:
            truncated = True
            nxt = nxt[:cap]
        frontier = nxt
    orbits = tuple(PrecriticalOrbit(np.array(pts), bits) for bits, pts in frontier)
    return PrecriticalTree(M, orbits, tuple(counts), truncated, cap)


def recomposition_error(m: UnimodalMap, pre: PrecriticalOrbit) -> float:
    """``|f^{M-1}(y_{-M}) - c|``; meaningful only for ``M <= RECOMPOSE_MAX_DEPTH``."""
    return abs(float(m.iterate(np.float64(pre.points[-1]), len(pre) - 1)) - m.c)


# ---------------------------------------------------------------- covering and symmetry


def _preimage_set(m: UnimodalMap, ys):
    out = []
    for br in (m.left, m.right):
        x = br.inv(ys)
        ok = np.isfinite(x) & (x >= br.lo - 1e-15) & (x <= br.hi + 1e-15) & m.in_core(x)
        out.append(np.clip(x[ok], br.lo, br.hi))
    return np.unique(np.concatenate(out))


def max_gap(points, lo, hi):
    """Smallest ``eps`` for which ``points`` is ``eps``-dense in ``[lo, hi]``."""
    p = np.sort(np.asarray(points, dtype=float))
    if p.size == 0:
        return math.inf
    inner = np.max(np.diff(p)) / 2 if p.size > 1 else 0.0
    return max(p[0] - lo, hi - p[-1], inner)


def covering_depth(m: UnimodalMap, x0: float, eps: float, max_points=MAX_PREIMAGES, max_depth=200):
    """First ``l`` with ``f^{-l}(x0)`` (inside ``[c_2, c_1]``) ``eps``-dense; returns ``(l, size)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.array([float(x0)])
    for ell in range(max_depth + 1):
        if max_gap(pts, m.c2, m.c1) <= eps:
            return ell, int(pts.size)
        pts = _preimage_set(m, pts)
        if pts.size > max_points:
            raise DepthBudgetExceeded(f"preimage set exceeds {max_points} points at depth {ell + 1}")
    raise DepthBudgetExceeded(f"not eps-dense within {max_depth} steps")


@dataclass(frozen=True)
class SymmetryVerdict:
    symmetric: bool
    max_gap: float
    worst_pair: tuple
    worst_y: float


def f_symmetry_check(m: UnimodalMap, phi, samples=4097, tol=1e-12) -> SymmetryVerdict:
    """Largest ``|phi(x) - phi(x')|`` over pairs ``f(x) = f(x') = y`` with ``y`` sampled in ``[c_2, c_1]``."""
    ys = np.linspace(m.c2, m.c1, samples)
    xl = m.left.inv(ys)
    xr = m.right.inv(ys)
    ok = (m.in_core(xl) & m.in_core(xr) & (xl >= m.left.lo) & (xl <= m.left.hi)
          & (xr >= m.right.lo) & (xr <= m.right.hi) & (np.abs(xl - xr) > 1e-15))
    if not np.any(ok):
        return SymmetryVerdict(True, 0.0, (), float("nan"))
    gap = np.abs(np.asarray(phi(xl[ok])) - np.asarray(phi(xr[ok])))
    i = int(np.argmax(gap))
    return SymmetryVerdict(bool(gap[i] <= tol), float(gap[i]), (float(xl[ok][i]), float(xr[ok][i])), float(ys[ok][i]))


# ---------------------------------------------------------------- witnesses


@dataclass(frozen=True, eq=False)
class Witness:
    x: float
    x_tilde: float
    ell: int
    window: RightLimitWindow
    window_tilde: RightLimitWindow
    covering_ell: int
    radius: tuple = field(default_factory=tuple)

    def agreement(self):
        """Largest ``|b_n - b~_n|`` over ``ell <= n <= W``."""
        ns = range(self.ell, self.window.W + 1)
        return max(abs(self.window.b(n) - self.window_tilde.b(n)) for n in ns)

    def difference_at_zero(self, phi=None):
        u, v = self.window.b(0), self.window_tilde.b(0)
        if phi is not None:
            u, v = phi(np.array([u]))[0], phi(np.array([v]))[0]
        return abs(u - v)

    def to_json(self):
        return {
            "base_points": [self.x, self.x_tilde],
            "ell": self.ell,
            "covering_ell": self.covering_ell,
            "search_radius": list(self.radius),
            "windows": [self.window.to_json(), self.window_tilde.to_json()],
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _approach_indices(pts, target, radius0, W):
    """Indices ``k`` with ``|c_{k+1} - target|`` below ``radius0 / 2^j``, first hit per level."""
    d = np.abs(pts - target)
    d[:W] = np.inf
    d[len(pts) - W :] = np.inf
    ks, radius = [], radius0
    while True:
        hit = np.nonzero(d < radius)[0]
        if hit.size == 0:
            break
        k = int(hit[0])
        if not ks or k > ks[-1]:
            ks.append(k)
        radius /= 2
    return ks, radius * 2


def breuer_simon_witness(m: UnimodalMap, orbit: PostcriticalOrbit, phi, delta_search: float,
                         max_ell=12, W=None) -> Witness:
    """Two preimages ``x, x~`` of ``c`` under ``f^l`` with ``|phi(x) - phi(x~)| > delta_search``,
    each approached by the orbit prefix, and the two resulting windows.

    The windows agree for ``n >= l`` (both follow the forward orbit of
    ``c``) and differ at ``n = 0``. The search radius starts at
    ``delta_search / 4`` and halves while the prefix still hits it.
    ``W`` defaults to ``l + 1``: window entries drift apart like
    ``lam^n`` times the approach distance.
    """
    if orbit.preperiodicity is not None:
        raise NotFound("postcritical orbit is finite; it cannot approach arbitrary preimages", finite_orbit=True)
    try:
        covering_ell, _ = covering_depth(m, m.c, delta_search)
    except DepthBudgetExceeded:
        covering_ell = -1
    pts = orbit.points
    level = np.array([m.c])
    for ell in range(1, max_ell + 1):
        level = _preimage_set(m, level)
        if level.size < 2:
            continue
        vals = np.asarray(phi(level))
        order = np.argsort(np.real(vals))
        lo_i, hi_i = int(order[0]), int(order[-1])
        if abs(vals[hi_i] - vals[lo_i]) <= delta_search:
            continue
        win = ell + 1 if W is None else W
        x, xt = float(level[lo_i]), float(level[hi_i])
        ks, r1 = _approach_indices(pts, x, delta_search / 4, win)
        kts, r2 = _approach_indices(pts, xt, delta_search / 4, win)
        if len(ks) < 2 or len(kts) < 2:
            continue
        w1 = window_from_centers(orbit, ks, win)
        w2 = window_from_centers(orbit, kts, win)
        return Witness(x, xt, ell, w1, w2, covering_ell, (r1, r2))
    raise NotFound(f"no preimage pair with phi gap above {delta_search} is approached by the orbit prefix")

