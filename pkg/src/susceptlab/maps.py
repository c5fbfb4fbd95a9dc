"""Piecewise expanding unimodal maps, their critical orbits and inverse branches.

A map is stored as two monotone branches glued at the critical point ``c``:
the left branch is increasing on ``[a, c]`` and the right branch is
decreasing on ``[c, b]``. Both branches must map their endpoints so that
``f(a) = f(b) = a``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    BranchUnavailable,
    DiscontinuousAtC,
    EndpointViolated,
    ExpansionViolated,
    MapSpecError,
)

ENDPOINT_TOL = 1e-12
PREPERIODIC_TOL = 1e-13
VALIDATION_GRID = 10_000

LEFT, RIGHT = 0, 1


def monotone_inverse(func, dfunc, y, lo, hi, increasing, iters=64):
    """Vectorised safeguarded inverse of a monotone function on ``[lo, hi]``.

    Bisection to full double precision, followed by two Newton steps kept
    inside the final bracket. Values of ``y`` outside the image come back as NaN.
    """
    y = np.asarray(y, dtype=float)
    flo, fhi = func(np.float64(lo)), func(np.float64(hi))
    ymin, ymax = min(flo, fhi), max(flo, fhi)
    span = max(abs(ymax - ymin), 1.0)
    outside = (y < ymin - 1e-15 * span) | (y > ymax + 1e-15 * span)
    yc = np.clip(y, ymin, ymax)
    left = np.full(y.shape, float(lo))
    right = np.full(y.shape, float(hi))
    for _ in range(iters):
        mid = 0.5 * (left + right)
        fm = func(mid)
        below = fm < yc if increasing else fm > yc
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
    x = 0.5 * (left + right)
    for _ in range(2):
        d = dfunc(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - (func(x) - yc) / d
        ok = np.isfinite(xn) & (xn >= lo) & (xn <= hi)
        x = np.where(ok, xn, x)
    return np.where(outside, np.nan, x)


class LinearBranch:
    """Affine branch ``x -> slope * x + intercept`` on ``[lo, hi]``."""

    def __init__(self, slope, intercept, lo, hi):
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.lo, self.hi = float(lo), float(hi)
        self.increasing = self.slope > 0

    def f(self, x):
        return self.slope * x + self.intercept

    f_scalar = f

    def df(self, x):
        return np.full(np.shape(x), self.slope) if np.ndim(x) else self.slope

    def d2f(self, x):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def inv(self, y):
        return (y - self.intercept) / self.slope

    def min_abs_derivative(self):
        return abs(self.slope)

    def max_abs_derivative(self):
        return abs(self.slope)

    def exact_coefficients(self):
        return Fraction(self.slope), Fraction(self.intercept)


class PolyBranch:
    """Polynomial branch with ascending coefficients ``coeffs`` on ``[lo, hi]``."""

    def __init__(self, coeffs, lo, hi):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise MapSpecError("polynomial branch needs a non-empty coefficient list")
        self.dcoeffs = P.polyder(self.coeffs)
        self.d2coeffs = P.polyder(self.dcoeffs)
        self.lo, self.hi = float(lo), float(hi)
        self.increasing = P.polyval(0.5 * (self.lo + self.hi), self.dcoeffs) > 0
        self._rev = [float(v) for v in self.coeffs[::-1]]

    def f(self, x):
        return P.polyval(x, self.coeffs)

    def f_scalar(self, x):
        acc = 0.0
        for v in self._rev:
            acc = acc * x + v
        return acc

    def df(self, x):
        return P.polyval(x, self.dcoeffs)

    def d2f(self, x):
        return P.polyval(x, self.d2coeffs)

    def inv(self, y):
        return monotone_inverse(self.f, self.df, y, self.lo, self.hi, self.increasing)

    def _derivative_candidates(self):
        grid = np.linspace(self.lo, self.hi, VALIDATION_GRID)
        crit = P.polyroots(self.d2coeffs) if self.d2coeffs.size > 1 else np.array([])
        crit = np.real(crit[np.abs(np.imag(crit)) < 1e-12])
        crit = crit[(crit >= self.lo) & (crit <= self.hi)]
        return np.abs(self.df(np.concatenate([grid, crit])))

    def min_abs_derivative(self):
        return float(self._derivative_candidates().min())

    def max_abs_derivative(self):
        return float(self._derivative_candidates().max())

    def exact_coefficients(self):
        return None


class ComposedBranch:
    """Branch ``x -> outer(base(x))`` for a monotone increasing ``outer``."""

    def __init__(self, base, outer, outer_d, outer_d2, outer_inv):
        self.base = base
        self.outer, self.outer_d, self.outer_d2, self.outer_inv = outer, outer_d, outer_d2, outer_inv
        self.lo, self.hi = base.lo, base.hi
        self.increasing = base.increasing

    def f(self, x):
        return self.outer(self.base.f(x))

    def f_scalar(self, x):
        return float(self.outer(self.base.f_scalar(x)))

    def df(self, x):
        return self.outer_d(self.base.f(x)) * self.base.df(x)

    def d2f(self, x):
        u = self.base.f(x)
        return self.outer_d2(u) * self.base.df(x) ** 2 + self.outer_d(u) * self.base.d2f(x)

    def inv(self, y):
        return self.base.inv(self.outer_inv(y))

    def min_abs_derivative(self):
        grid = np.linspace(self.lo, self.hi, VALIDATION_GRID)
        return float(np.abs(self.df(grid)).min())

    def max_abs_derivative(self):
        grid = np.linspace(self.lo, self.hi, VALIDATION_GRID)
        return float(np.abs(self.df(grid)).max())

    def exact_coefficients(self):
        return None


@dataclass(frozen=True)
class MapSpec:
    """Declarative description of a unimodal map.

    ``family`` is one of ``tent`` (param ``slope``), ``skewed-tent``
    (params ``height``, ``c``) or ``polynomial-branches`` (params ``left``,
    ``right``: ascending coefficient lists, and ``c``).
    """

    family: str
    params: dict
    interval: tuple = (0.0, 1.0)


@dataclass(frozen=True, eq=False)
class UnimodalMap:
    left: object
    right: object
    a: float
    b: float
    c: float
    lam: float
    lam_max: float
    spec: Optional[MapSpec] = None
    c1: float = field(init=False)
    c2: float = field(init=False)

    def __post_init__(self):
        c1 = self.left.f_scalar(self.c)
        object.__setattr__(self, "c1", float(c1))
        object.__setattr__(self, "c2", float(self.right.f_scalar(c1)))

    @property
    def trapping_interval(self):
        return (self.c2, self.c1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.c, self.left.f(x), self.right.f(x))

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.c, self.left.df(x), self.right.df(x))

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.c, self.left.d2f(x), self.right.d2f(x))

    def step(self, x: float) -> float:
        return self.left.f_scalar(x) if x <= self.c else self.right.f_scalar(x)

    def branch(self, side):
        return self.left if side == LEFT else self.right

    def in_core(self, x, slack=1e-14):
        tol = slack * (self.b - self.a)
        return (x >= self.c2 - tol) & (x <= self.c1 + tol)

    def iterate(self, x, n):
        for _ in range(n):
            x = self(x)
        return x

    def is_linear(self):
        return isinstance(self.left, LinearBranch) and isinstance(self.right, LinearBranch)


def _tent_branches(spec):
    a, b = map(float, spec.interval)
    fam = spec.family
    p = spec.params
    if fam == "tent":
        s = float(p["slope"])
        c = 0.5 * (a + b)
        left = LinearBranch(s, a - s * a, a, c)
        right = LinearBranch(-s, a + s * b, c, b)
    elif fam == "skewed-tent":
        h = float(p["height"])
        c = float(p["c"])
        if not a < c < b:
            raise MapSpecError(f"critical point {c} not inside ({a}, {b})")
        sl, sr = h / (c - a), h / (b - c)
        left = LinearBranch(sl, a - sl * a, a, c)
        right = LinearBranch(-sr, a + sr * b, c, b)
    elif fam == "polynomial-branches":
        c = float(p["c"])
        if not a < c < b:
            raise MapSpecError(f"critical point {c} not inside ({a}, {b})")
        left = PolyBranch(p["left"], a, c)
        right = PolyBranch(p["right"], c, b)
    else:
        raise MapSpecError(f"unknown map family {fam!r}")
    return left, right, c


def assemble_map(left, right, a, b, c, spec=None):
    """Validate two branches and glue them into a :class:`UnimodalMap`."""
    if not a < c < b:
        raise MapSpecError(f"need a < c < b, got {a}, {c}, {b}")
    fa, fb = left.f_scalar(a), right.f_scalar(b)
    if abs(fa - a) > ENDPOINT_TOL or abs(fb - a) > ENDPOINT_TOL:
        raise EndpointViolated(f"f(a)={fa!r}, f(b)={fb!r}, expected {a!r}")
    fl, fr = left.f_scalar(c), right.f_scalar(c)
    if abs(fl - fr) > ENDPOINT_TOL:
        raise DiscontinuousAtC(f"left branch gives {fl!r}, right branch {fr!r} at c={c}")
    if not left.increasing or right.increasing:
        raise ExpansionViolated("left branch must increase and right branch must decrease")
    lam = min(left.min_abs_derivative(), right.min_abs_derivative())
    if not lam > 1.0:
        raise ExpansionViolated(f"inf |f'| = {lam} <= 1")
    lam_max = max(left.max_abs_derivative(), right.max_abs_derivative())
    m = UnimodalMap(left, right, float(a), float(b), float(c), float(lam), float(lam_max), spec)
    if m.c1 > b + ENDPOINT_TOL:
        raise MapSpecError(f"critical value {m.c1} leaves the interval")
    if not m.c2 < m.c1:
        raise MapSpecError(f"need c_2 < c_1, got {m.c2}, {m.c1}")
    if not m.c2 <= c <= m.c1:
        raise MapSpecError("critical point outside the trapping interval [c_2, c_1]")
    return m


def build_map(spec: MapSpec) -> UnimodalMap:
    """Build and validate a map from its spec.

    >>> m = build_map(MapSpec("tent", {"slope": 2.0}))
    >>> m.lam, m.c, (m.c2, m.c1)
    (2.0, 0.5, (0.0, 1.0))
    """
    left, right, c = _tent_branches(spec)
    a, b = map(float, spec.interval)
    return assemble_map(left, right, a, b, c, spec)


@dataclass(frozen=True)
class Preperiodicity:
    """``c_{m+p} == c_m`` (1-based); ``proven`` only when found in exact arithmetic."""

    m: int
    p: int
    proven: bool


@dataclass(frozen=True, eq=False)
class PostcriticalOrbit:
    """Points ``c_1..c_K`` and derivative products ``D_n = (f^n)'(c_1)``.

    ``points[k - 1]`` is ``c_k``; ``derivs[n - 1]`` is ``D_n`` for ``n = 1..K-1``.
    """

    points: np.ndarray
    derivs: np.ndarray
    inv_derivs: np.ndarray
    preperiodicity: Optional[Preperiodicity]
    lam: float

    def __len__(self):
        return len(self.points)

    def c(self, k):
        return self.points[k - 1]

    def weights(self, n_max):
        """``1 / D_n`` for ``n = 0..n_max`` with ``D_0 = 1``."""
        if n_max > len(self.inv_derivs):
            raise IndexError("orbit too short for requested derivative products")
        return np.concatenate(([1.0], self.inv_derivs[:n_max]))


def _exact_preperiod(m: UnimodalMap, K: int, max_steps=200, max_bits=512):
    coeffs = [br.exact_coefficients() for br in (m.left, m.right)]
    if any(cf is None for cf in coeffs):
        return None
    (sl, il), (sr, ir) = coeffs
    c = Fraction(m.c)
    x = sl * c + il
    seen = {}
    for k in range(1, min(K, max_steps) + 1):
        if x in seen:
            m0 = seen[x]
            return Preperiodicity(m0, k - m0, True)
        seen[x] = k
        if x.denominator.bit_length() > max_bits:
            return None
        x = sl * x + il if x <= c else sr * x + ir
    return None


def _float_preperiod(points, prefix=2048, tol=PREPERIODIC_TOL):
    pts = points[:prefix]
    for i in range(len(pts) - 1):
        hits = np.nonzero(np.abs(pts[i + 1:] - pts[i]) <= tol)[0]
        if hits.size:
            return Preperiodicity(i + 1, int(hits[0]) + 1, False)
    return None


def postcritical_orbit(m: UnimodalMap, K: int) -> PostcriticalOrbit:
    """Forward orbit of the critical point with derivative products."""
    if K < 2:
        raise ValueError("K must be at least 2")
    pts = np.empty(K)
    x = m.c1
    step = m.step
    for k in range(K):
        pts[k] = x
        x = step(x)
    fp = m.deriv(pts[:-1])
    with np.errstate(over="ignore", under="ignore"):
        derivs = np.cumprod(fp)
        inv = np.cumprod(1.0 / fp)
    pre = _exact_preperiod(m, K)
    if pre is None:
        pre = _float_preperiod(pts)
    return PostcriticalOrbit(pts, derivs, inv, pre, m.lam)


def preimages(m: UnimodalMap, y: float) -> list:
    """Solutions of ``f(x) = y`` inside ``[c_2, c_1]``, sorted ascending."""
    out = []
    for br in (m.left, m.right):
        x = float(br.inv(np.float64(y)))
        if not np.isfinite(x):
            continue
        if br.lo - 1e-15 <= x <= br.hi + 1e-15 and m.in_core(x):
            if not any(abs(x - o) <= 1e-15 * max(1.0, abs(x)) for o in out):
                out.append(x)
    return sorted(out)


def inverse_step(m: UnimodalMap, y: float, side: int) -> Optional[float]:
    """Preimage of ``y`` on one branch if it lies in ``[c_2, c_1]``."""
    br = m.branch(side)
    x = float(br.inv(np.float64(y)))
    if not np.isfinite(x) or not (br.lo - 1e-15 <= x <= br.hi + 1e-15):
        return None
    if not m.in_core(x):
        return None
    return min(max(x, br.lo), br.hi)


@dataclass(frozen=True, eq=False)
class PrecriticalOrbit:
    """Backward orbit ``y_{-1} = c, y_{-2}, ..., y_{-M}``; ``points[m - 1]`` is ``y_{-m}``.

    ``bits[m - 2]`` is the branch (0 left, 1 right) used to produce ``y_{-m}``.
    """

    points: np.ndarray
    bits: tuple

    def __len__(self):
        return len(self.points)

    def y(self, n):
        if n > -1:
            raise IndexError("precritical orbits are indexed by n <= -1")
        return self.points[-n - 1]


def precritical_orbit(m: UnimodalMap, bits: Iterable[int], M: int) -> PrecriticalOrbit:
    """Backward orbit of ``c`` following the given inverse-branch choices."""
    if M < 1:
        raise ValueError("M must be at least 1")
    pts = np.empty(M)
    pts[0] = m.c
    used = []
    it = iter(bits)
    for depth in range(2, M + 1):
        try:
            side = int(next(it))
        except StopIteration:
            raise ValueError(f"need {M - 1} branch bits, got {depth - 2}") from None
        x = inverse_step(m, pts[depth - 2], side)
        if x is None:
            raise BranchUnavailable(depth)
        pts[depth - 1] = x
        used.append(side)
    return PrecriticalOrbit(pts, tuple(used))


def sample_precritical_orbit(m: UnimodalMap, M: int, rng, density=None) -> PrecriticalOrbit:
    """Random backward orbit of ``c`` of depth ``M``.

    When two preimages are available the branch is drawn with probability
    proportional to ``density(x) / |f'(x)|`` (uniformly if ``density`` is None),
    which makes the backward chain stationary for the invariant measure.
    """
    u = rng.random(M)
    pts = np.empty(M)
    pts[0] = m.c
    used = []
    for depth in range(2, M + 1):
        y = pts[depth - 2]
        xl = inverse_step(m, y, LEFT)
        xr = inverse_step(m, y, RIGHT)
        if xl is None and xr is None:
            raise BranchUnavailable(depth)
        if xl is None or xr is None:
            side = LEFT if xr is None else RIGHT
        elif density is None:
            side = LEFT if u[depth - 1] < 0.5 else RIGHT
        else:
            wl = density(xl) / abs(m.left.df(xl))
            wr = density(xr) / abs(m.right.df(xr))
            tot = wl + wr
            pl = 0.5 if tot <= 0 else wl / tot
            side = LEFT if u[depth - 1] < pl else RIGHT
        pts[depth - 1] = xl if side == LEFT else xr
        used.append(side)
    return PrecriticalOrbit(pts, tuple(used))


def all_bit_strings(length):
    return itertools.product((LEFT, RIGHT), repeat=length)
