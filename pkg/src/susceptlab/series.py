"""Certified evaluation of the power series built from the postcritical orbit.

Every evaluation returns a :class:`SeriesValue` carrying the truncation
index and a rigorous bound on the discarded tail, computed from
``sup |phi|`` on the trapping interval and from ``|(f^n)'| >= lam^n``.

Sign convention. Writing ``Psi_sing(z) = -sum_n z^n sum_k s_k X(c_k)
phi(c_{k+n})`` (the value obtained from the jump part of ``(X rho)'``),
the factorisation through ``U`` and ``V`` reads
``Psi_sing = V - U * sigma``. The sign of the ``U`` term matters only
away from horizontal perturbations; ``U(1) = 0`` is unaffected.
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acim import AcimDensity, psi_hol_eval
from .errors import (
    NotHorizontal,
    NotPreperiodic,
    OrbitTooShort,
    OutsideDomain,
    SingularSystem,
    TailUnreachable,
)
from .functions import Fn, Observable, Perturbation, sup_abs
from .maps import PostcriticalOrbit, PrecriticalOrbit, UnimodalMap

HORIZONTAL_TOL = 1e-8
MAKE_HORIZONTAL_TOL = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SeriesValue:
    value: complex
    K: int
    tail: float

    def __complex__(self):
        return complex(self.value)


def _rising(j, d):
    """Rising factorial ``j (j+1) ... (j+d-1)`` (vectorised in ``j``)."""
    out = np.ones_like(np.asarray(j, dtype=float))
    for i in range(d):
        out = out * (np.asarray(j, dtype=float) + i)
    return out


def _falling(n, d):
    out = np.ones_like(np.asarray(n, dtype=float))
    for i in range(d):
        out = out * (np.asarray(n, dtype=float) - i)
    return out


def _core_sup(m: UnimodalMap, fn, extra=None):
    lo, hi = m.trapping_interval
    return sup_abs(fn, lo, hi, extra=extra)


def _geometric_K(sup, r, tol, d=0):
    """Smallest ``K`` with ``sup * sum_{k>=K} rising(k, d) r^k <= tol``.

    With ``d = 0`` this is the plain bound ``sup r^K / (1 - r)``.
    """
    if sup == 0 or r == 0:
        return 1
    lo, K = 0, 1
    while _poly_geometric_tail(r, K, d) * sup > tol:
        lo, K = K, K + (1 if K < 64 else K // 8)
        if K > 10**9:
            raise TailUnreachable("tail bound cannot reach tolerance")
    while K - lo > 1:  # tighten the overshoot of the coarse steps
        mid = (lo + K) // 2
        if _poly_geometric_tail(r, mid, d) * sup <= tol:
            K = mid
        else:
            lo = mid
    return K


def _poly_geometric_tail(r, K, d):
    """Upper bound for ``sum_{k>=K} rising(k, d) r^k`` (0 < r < 1)."""
    if d == 0:
        return r**K / (1.0 - r)
    K = max(K, 1)
    ratio = r * (K + d) / K
    if ratio >= 1:
        return math.inf
    return float(_rising(K, d)) * r**K / (1.0 - ratio)


# ---------------------------------------------------------------- sigma


def rotated_sums(orbit: PostcriticalOrbit, phi, omega, m_max):
    """``S_k(e^{i omega}) = sum_{j<k} e^{i j omega} phi(c_{j+1})`` for ``k = 1..m_max``."""
    if m_max > len(orbit):
        raise OrbitTooShort(f"need {m_max} orbit points, have {len(orbit)}")
    vals = np.asarray(phi(orbit.points[:m_max]), dtype=complex)
    rot = np.exp(1j * omega * np.arange(m_max))
    return np.cumsum(rot * vals)


def sigma_eval(orbit: PostcriticalOrbit, phi, z, mode="direct", tol=1e-12, omega=None, sup=None):
    """``sigma_phi(z) = sum_k phi(c_{k+1}) z^k`` for ``|z| < 1``.

    ``mode='abel'`` sums ``(1 - z') sum_k S_k(e^{i omega}) z'^{k-1}`` with
    ``z = e^{i omega} z'``; ``omega`` defaults to ``arg z``.
    """
    z = complex(z)
    r = abs(z)
    if r >= 1:
        raise OutsideDomain("sigma_eval needs |z| < 1")
    if sup is None:
        sup = sup_abs(phi, orbit.points.min(), orbit.points.max(), extra=orbit.points[:64])
    if mode == "direct":
        K = _geometric_K(sup, r, tol)
        if K > len(orbit):
            raise TailUnreachable(f"need {K} terms, orbit has {len(orbit)}")
        coeffs = np.asarray(phi(orbit.points[:K]), dtype=complex)
        value = np.polynomial.polynomial.polyval(z, coeffs) if K < 4096 else np.sum(coeffs * z ** np.arange(K))
        return SeriesValue(complex(value), K, sup * r**K / (1 - r))
    if mode == "abel":
        if omega is None:
            omega = cmath.phase(z)
        zp = z * cmath.exp(-1j * omega)
        rp = abs(zp)
        if rp >= 1:
            raise OutsideDomain("rotated point must lie in the unit disc")
        # |S_k| <= k sup, so the tail of (1 - z') sum_k S_k z'^{k-1} is bounded
        # by sup |1 - z'| ((K+1) r^K (1 - r) + r^{K+1}) / (1 - r)^2
        fac = sup * abs(1 - zp)

        def tail(K):
            return fac * ((K + 1) * rp**K * (1 - rp) + rp ** (K + 1)) / (1 - rp) ** 2

        K = 1
        while tail(K) > tol:
            K = K + 1 if K < 64 else K + K // 8
            if K > len(orbit):
                raise TailUnreachable(f"Abel mode needs more than {len(orbit)} terms")
        if K > len(orbit):
            raise TailUnreachable(f"need {K} terms, orbit has {len(orbit)}")
        S = rotated_sums(orbit, phi, omega, K)
        powers = zp ** np.arange(K)
        value = (1 - zp) * np.sum(S * powers)
        return SeriesValue(complex(value), K, float(tail(K)))
    raise ValueError(f"unknown mode {mode!r}")


def sigma_outer_eval(pre: PrecriticalOrbit, phi, z, tol=1e-12, sup=None):
    """``-sum_{n <= -1} phi(c_{n+1}) z^n`` with ``c_{n+1} = y_n`` for ``|z| > 1``."""
    z = complex(z)
    R = abs(z)
    if R <= 1:
        raise OutsideDomain("sigma_outer_eval needs |z| > 1")
    pts = pre.points
    if sup is None:
        sup = float(np.max(np.abs(phi(pts)))) if len(pts) else 0.0
    q = 1.0 / R
    K = _geometric_K(sup, q, tol) if sup > 0 else 1
    # terms m = 1..K use y_{-1}..y_{-K}; the tail starts at m = K+1
    K = max(K - 1, 1)
    tail = sup * q ** (K + 1) / (1 - q)
    if K > len(pts):
        raise TailUnreachable(f"need precritical depth {K}, have {len(pts)}")
    vals = np.asarray(phi(pts[:K]), dtype=complex)
    value = -np.sum(vals * z ** (-np.arange(1, K + 1.0)))
    return SeriesValue(complex(value), K, float(tail))


@dataclass(frozen=True)
class RationalSigma:
    """``sigma = P(z) + Q(z) / (1 - z^p)`` for an orbit with preperiod ``m`` and period ``p``.

    ``P`` carries ``phi(c_1) .. phi(c_{m-1})``; ``Q`` carries one period
    ``phi(c_m) .. phi(c_{m+p-1})`` at powers ``z^{m-1} .. z^{m+p-2}``.
    """

    P: np.ndarray
    Q: np.ndarray
    m: int
    p: int

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        pv = np.polynomial.polynomial.polyval(z, self.P) if len(self.P) else 0
        qv = np.polynomial.polynomial.polyval(z, self.Q)
        return pv + qv / (1 - z**self.p)

    def coefficients(self, n):
        out = np.zeros(n, dtype=complex)
        k = min(n, len(self.P))
        out[:k] = self.P[:k]
        for j in range(self.m - 1, n):
            out[j] += self.Q[self.m - 1 + (j - (self.m - 1)) % self.p]
        return out

    def poles(self):
        return np.exp(2j * np.pi * np.arange(self.p) / self.p)

    def residue(self, z0):
        """Residue of ``sigma`` in the variable ``z`` at a root of unity ``z0``."""
        z0 = complex(z0)
        qv = np.polynomial.polynomial.polyval(z0, self.Q)
        return -z0 * qv / self.p

    def period_average(self, z0):
        """``(1/p) sum_{k=m}^{m+p-1} z0^{k-1} phi(c_k)``; equals ``residue / (-z0)``."""
        z0 = complex(z0)
        return np.polynomial.polynomial.polyval(z0, self.Q) / self.p


def rational_sigma(orbit: PostcriticalOrbit, phi) -> RationalSigma:
    rec = orbit.preperiodicity
    if rec is None:
        raise NotPreperiodic("orbit has no preperiodicity record")
    m, p = rec.m, rec.p
    if m + p - 1 > len(orbit):
        raise OrbitTooShort("orbit shorter than preperiod plus period")
    vals = np.asarray(phi(orbit.points[: m + p - 1]), dtype=complex)
    P = vals[: m - 1].copy()
    Q = np.zeros(m + p - 1, dtype=complex)
    Q[m - 1 :] = vals[m - 1 : m + p - 1]
    return RationalSigma(P, Q, m, p)


# ---------------------------------------------------------------- alpha, U, V


def _sup_X(m, orbit, X):
    return _core_sup(m, X, extra=orbit.points[:256])


def alpha_eval(m: UnimodalMap, orbit: PostcriticalOrbit, X, ell, z, tol=1e-13, d=0, sup=None):
    """``d``-th z-derivative of ``alpha(c_ell, z) = -sum_j X(c_{ell+j}) / (z^j (f^j)'(c_ell))``."""
    z = complex(z)
    lam = m.lam
    if abs(z) * lam <= 1:
        raise OutsideDomain(f"alpha needs |z| > 1/lam = {1 / lam:.6g}")
    if sup is None:
        sup = _sup_X(m, orbit, X)
    q = 1.0 / (abs(z) * lam)
    scale = abs(z) ** (-d)
    J = _geometric_K(sup * scale, q, tol, d) if sup > 0 else 1
    J = max(J - 1, 1)
    if ell + J > len(orbit):
        raise TailUnreachable(f"alpha at ell={ell} needs {ell + J} orbit points")
    pts = orbit.points[ell - 1 : ell + J]  # c_ell .. c_{ell+J}
    inv = np.cumprod(1.0 / m.deriv(pts[:-1]))  # 1/(f^j)'(c_ell), j = 1..J
    j = np.arange(1, J + 1)
    xv = np.asarray(X(pts[1:]), dtype=complex)
    dz = (-1) ** d * _rising(j, d) * z ** (-(j + d))
    value = -np.sum(xv * inv * dz)
    tail = sup * scale * _poly_geometric_tail(q, J + 1, d)
    return SeriesValue(complex(value), J, float(tail))


def u_eval(m, orbit, X, s1, z, tol=1e-13, d=0):
    """``U(z) = s_1 (X(c_1) - alpha(c_1, z))`` or its ``d``-th derivative."""
    a = alpha_eval(m, orbit, X, 1, z, tol, d)
    head = complex(X(np.array([orbit.c(1)]))[0]) if d == 0 else 0.0
    return SeriesValue(s1 * (head - a.value), a.K, abs(s1) * a.tail)


def v_eval(m, orbit, X, phi, s1, z, tol=1e-12, d=0, sup_phi=None, sup_x=None):
    """``V_phi(z) = s_1 sum_j phi(c_j) A_j(z)`` with ``A_j = sum_{i>=1} X(c_{j+i}) z^{-i} / D_{j+i-1}``.

    ``A_j = -alpha(c_j, z) / D_{j-1}``, so this is the same sum as
    ``-s_1 sum_j phi(c_j) alpha(c_j, z) / (f^{j-1})'(c_1)``.
    """
    z = complex(z)
    lam = m.lam
    if abs(z) * lam <= 1:
        raise OutsideDomain(f"V needs |z| > 1/lam = {1 / lam:.6g}")
    if sup_phi is None:
        sup_phi = _core_sup(m, phi, extra=orbit.points[:256])
    if sup_x is None:
        sup_x = _sup_X(m, orbit, X)
    if sup_phi == 0 or sup_x == 0 or s1 == 0:
        return SeriesValue(0j, 0, 0.0)
    q = 1.0 / (abs(z) * lam)
    pref = abs(s1) * sup_phi * sup_x * abs(z) ** (-d) / (1 - 1 / lam)
    total_inner = _poly_geometric_tail(q, 1, d)
    I = max(_geometric_K(pref, q, tol / 2, d) - 1, 1)
    J = 1
    while pref * lam ** (-J) * total_inner > tol / 2:
        J += 1
    if J + I > len(orbit):
        raise TailUnreachable(f"V needs {J + I} orbit points, have {len(orbit)}")
    w = np.asarray(X(orbit.points[1 : J + I]), dtype=complex) * orbit.inv_derivs[: J + I - 1]
    # w[n-1] = X(c_{n+1}) / D_n for n = 1..J+I-1
    i = np.arange(1, I + 1)
    zi = (-1) ** d * _rising(i, d) * z ** (-(i + d))
    idx = np.arange(J)[:, None] + np.arange(I)[None, :]  # n - 1 = j + i - 2
    A = (w[idx] * zi[None, :]).sum(axis=1)
    phis = np.asarray(phi(orbit.points[:J]), dtype=complex)
    value = s1 * np.sum(phis * A)
    tail = pref * _poly_geometric_tail(q, I + 1, d) + pref * lam ** (-J) * total_inner
    return SeriesValue(complex(value), J, float(tail))


def singular_factors(m, orbit, X, phi, s1, z, tol=1e-12):
    """``(U(z), V_phi(z))`` as :class:`SeriesValue` pairs."""
    return u_eval(m, orbit, X, s1, z, tol), v_eval(m, orbit, X, phi, s1, z, tol)


# ---------------------------------------------------------------- horizontality


def horizontality_sum(m: UnimodalMap, orbit: PostcriticalOrbit, X, ell=0, tol=1e-14, sup=None):
    """``sum_{n>=ell} n!/(n-ell)! X(c_{n+1}) / (f^n)'(c_1)`` with certified tail."""
    if sup is None:
        sup = _sup_X(m, orbit, X)
    q = 1.0 / m.lam
    if sup == 0:
        return SeriesValue(0j, 0, 0.0)
    # falling(n, ell) <= rising(n, ell), so the rising-factorial tail dominates
    N = max(_geometric_K(sup, q, tol, ell), ell + 1)
    if N > len(orbit):
        raise TailUnreachable(f"horizontality sum needs {N} orbit points")
    n = np.arange(0, N)
    w = orbit.weights(N - 1)
    xv = np.asarray(X(orbit.points[:N]), dtype=complex)  # X(c_{n+1})
    value = np.sum(_falling(n, ell) * xv * w)
    return SeriesValue(complex(value), N, float(sup * _poly_geometric_tail(q, N, ell)))


def horizontality_order(m, orbit, X, max_order=4, tol=HORIZONTAL_TOL):
    """Largest ``H <= max_order`` with the sums of orders ``0..H-1`` below ``tol``."""
    residuals = []
    H = 0
    for ell in range(max_order):
        r = abs(horizontality_sum(m, orbit, X, ell).value)
        residuals.append(r)
        if r <= tol and H == ell:
            H = ell + 1
    return H, tuple(residuals)


def make_horizontal(m, orbit, X0: Perturbation, basis, H, tol=MAKE_HORIZONTAL_TOL) -> Perturbation:
    """``X = X0 + sum_i t_i X_i`` with horizontality sums of orders ``0..H-1`` cancelled."""
    basis = list(basis)
    if H == 0:
        return X0
    if len(basis) != H:
        raise SingularSystem(f"order {H} needs exactly {H} basis elements, got {len(basis)}")
    A = np.array([[horizontality_sum(m, orbit, Xi, ell).value for Xi in basis] for ell in range(H)])
    b = np.array([horizontality_sum(m, orbit, X0, ell).value for ell in range(H)])
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"horizontality system condition number {cond:.3g}")
    t = np.linalg.solve(A, -b)
    if np.allclose(t.imag, 0):
        t = t.real
    fn = X0.fn.scaled_sum([Xi.fn for Xi in basis], t)
    X = Perturbation(fn, coefficients=tuple(t.tolist()))
    res = tuple(abs(horizontality_sum(m, orbit, X, ell).value) for ell in range(H))
    if max(res) > tol:
        raise SingularSystem(f"residuals {res} exceed {tol}")
    return Perturbation(fn, order=H, residuals=res, coefficients=tuple(t.tolist()))


def v_at_one_resummed(m, orbit, X, phi, s1, tol=1e-12):
    """``V_phi(1)`` through the suffix-sum form ``sum_j phi(c_j) sum_{k>=j} s_1 X(c_{k+1}) / D_k``.

    Also returns the prefix-sum form, which converges because ``X`` is
    horizontal.
    """
    h0 = horizontality_sum(m, orbit, X, 0)
    if abs(h0.value) > HORIZONTAL_TOL:
        raise NotHorizontal(f"horizontality sum {abs(h0.value):.3g} exceeds {HORIZONTAL_TOL}")
    sup_x = _sup_X(m, orbit, X)
    sup_phi = _core_sup(m, phi, extra=orbit.points[:256])
    q = 1.0 / m.lam
    if sup_x == 0 or s1 == 0:
        return SeriesValue(0j, 0, 0.0), SeriesValue(0j, 0, 0.0)
    # |inner_j| <= |s1| sup_x q^j / (1-q); sum over j > J bounded geometrically
    pref = abs(s1) * sup_x * sup_phi / (1 - q) ** 2
    J = 1
    while pref * q ** (J + 1) > tol / 2:
        J += 1
    N = J + max(_geometric_K(abs(s1) * sup_x, q, tol / (2 * J * max(sup_phi, 1e-300))), 1)
    if N + 1 > len(orbit):
        raise TailUnreachable("orbit too short for the resummation")
    w = np.asarray(X(orbit.points[1 : N + 1]), dtype=complex) * orbit.inv_derivs[:N]  # k = 1..N
    suffix = np.cumsum(w[::-1])[::-1]  # suffix[j-1] = sum_{k>=j} w_k
    phis = np.asarray(phi(orbit.points[:J]), dtype=complex)
    value = s1 * np.sum(phis * suffix[:J])
    tail = pref * q ** (J + 1) + tol / 2
    first = SeriesValue(complex(value), J, float(tail))
    # prefix form: -sum_j phi(c_j) sum_{k=1}^{j} s1 X(c_k) / D_{k-1}
    w0 = np.asarray(X(orbit.points[:J]), dtype=complex) * orbit.weights(J - 1)
    prefix = np.cumsum(w0)
    second = SeriesValue(complex(-s1 * np.sum(phis * prefix)), J, float(tail + abs(s1) * sup_phi * J * abs(h0.value)))
    return first, second


# ---------------------------------------------------------------- Psi


def psi_sing_direct(m, orbit, X, phi, s1, z, tol=1e-12, sup_phi=None, sup_x=None):
    """``-sum_n z^n sum_k s_k X(c_k) phi(c_{k+n})`` with ``s_k = s_1 / D_{k-1}``; valid for ``|z| < 1``."""
    z = complex(z)
    r = abs(z)
    if r >= 1:
        raise OutsideDomain("double-series form needs |z| < 1")
    if sup_phi is None:
        sup_phi = _core_sup(m, phi, extra=orbit.points[:256])
    if sup_x is None:
        sup_x = _sup_X(m, orbit, X)
    q = 1.0 / m.lam
    total = abs(s1) * sup_x / (1 - q)  # >= sum_k |s_k X(c_k)|
    if total == 0 or sup_phi == 0:
        return SeriesValue(0j, 0, 0.0)
    Kn = _geometric_K(total * sup_phi, r, tol / 2)
    Kk = 1
    while abs(s1) * sup_x * q**Kk / (1 - q) * sup_phi / (1 - r) > tol / 2:
        Kk += 1
    if Kk + Kn > len(orbit):
        raise TailUnreachable("orbit too short for the double series")
    sk = s1 * np.asarray(X(orbit.points[:Kk]), dtype=complex) * orbit.weights(Kk - 1)
    a = np.asarray(phi(orbit.points[: Kk + Kn]), dtype=complex)
    # b_n = sum_k sk[k-1] a[k-1+n]
    b = np.correlate(a, sk, mode="valid")[:Kn]
    value = -np.polynomial.polynomial.polyval(z, b)
    tail = total * sup_phi * r**Kn / (1 - r) + abs(s1) * sup_x * q**Kk / (1 - q) * sup_phi / (1 - r)
    return SeriesValue(complex(value), Kn, float(tail))


@dataclass(frozen=True)
class SusceptibilityValue:
    z: complex
    value: complex
    tail: float
    side: str
    route: str
    U: Optional[SeriesValue] = None
    sigma: Optional[SeriesValue] = None
    V: Optional[SeriesValue] = None
    sing: Optional[SeriesValue] = None
    hol: complex = 0j

    def as_series_value(self):
        return SeriesValue(self.value, (self.sigma or self.sing).K if (self.sigma or self.sing) else 0, self.tail)


def susceptibility_eval(
    m: UnimodalMap,
    orbit: PostcriticalOrbit,
    X,
    phi,
    density: AcimDensity,
    z,
    tol=1e-12,
    side="inner",
    pre: Optional[PrecriticalOrbit] = None,
    phi_grid=None,
    route="auto",
):
    """Assemble ``Psi_phi(z) = V(z) - U(z) sigma(z) + Psi_hol(z)``.

    ``side='outer'`` replaces ``sigma`` by the precritical series (needs
    ``pre``) and requires ``1 < |z| < 1.05``. On the inner side, points with
    ``|z| <= 1/lam`` (where ``U`` and ``V`` diverge) go through the
    double-series form of the singular part; ``route='factorized'`` forbids
    that fallback.
    """
    z = complex(z)
    r = abs(z)
    s1 = density.s1
    if phi_grid is None:
        phi_grid = phi(density.op.centers)
    hol = psi_hol_eval(density, X, X.d, phi_grid, z)
    if side == "inner":
        if r >= 1:
            raise OutsideDomain("inner side needs |z| < 1")
        if r * m.lam <= 1:
            if route == "factorized":
                raise OutsideDomain("U and V diverge for |z| <= 1/lam")
            sing = psi_sing_direct(m, orbit, X, phi, s1, z, tol)
            return SusceptibilityValue(z, sing.value + hol, sing.tail, side, "double-series", sing=sing, hol=hol)
        sig = sigma_eval(orbit, phi, z, "direct", tol)
    elif side == "outer":
        if not 1 < r < 1.05:
            raise OutsideDomain("outer side needs 1 < |z| < 1.05")
        if pre is None:
            raise ValueError("outer evaluation needs a precritical orbit")
        sig = sigma_outer_eval(pre, phi, z, tol)
    else:
        raise ValueError(f"unknown side {side!r}")
    U, V = singular_factors(m, orbit, X, phi, s1, z, tol)
    value = V.value - U.value * sig.value + hol
    tail = V.tail + abs(U.value) * sig.tail + U.tail * (abs(sig.value) + sig.tail)
    return SusceptibilityValue(z, value, tail, side, "factorized", U=U, sigma=sig, V=V, hol=hol)


# ---------------------------------------------------------------- direct oracle


def _lap_breakpoints(m: UnimodalMap, k):
    """Interior points of ``[a, b]`` where ``f^j`` hits ``c`` for some ``j < k``."""
    level = np.array([m.c])
    pts = [level]
    for _ in range(1, k):
        nxt = []
        for br in (m.left, m.right):
            ylo, yhi = sorted((float(br.f(np.array([br.lo]))[0]), float(br.f(np.array([br.hi]))[0])))
            ok = level[(level >= ylo) & (level <= yhi)]
            if ok.size:
                nxt.append(br.inv(ok))
        level = np.unique(np.concatenate(nxt)) if nxt else np.array([])
        level = level[(level > m.a) & (level < m.b)]
        pts.append(level)
    return np.unique(np.concatenate(pts))


def _inverse_on_laps(m, k, u, lo, hi):
    """Solve ``f^k(x) = u`` for ``x`` in the lap ``[lo, hi]`` (arrays)."""
    if m.is_linear():
        flo = m.iterate(lo, k)
        fhi = m.iterate(hi, k)
        return lo + (u - flo) * (hi - lo) / np.where(fhi != flo, fhi - flo, 1.0)
    flo = m.iterate(lo, k)
    inc = m.iterate(hi, k) > flo
    a, b = lo.copy(), hi.copy()
    for _ in range(60):
        mid = 0.5 * (a + b)
        fm = m.iterate(mid, k)
        go_right = (fm < u) == inc
        a = np.where(go_right, mid, a)
        b = np.where(go_right, b, mid)
    return 0.5 * (a + b)


def direct_term(m: UnimodalMap, X, dphi, rho, edges, k, nodes=8):
    """``int X(x) phi'(f^k x) (f^k)'(x) rho(x) dx`` for piecewise-constant ``rho``.

    The integral is split at grid edges and at the laps of ``f^k``; on
    each piece the substitution ``u = f^k(x)`` absorbs ``(f^k)'`` and
    Gauss-Legendre nodes in ``u`` do the rest.
    """
    brk = _lap_breakpoints(m, k) if k > 0 else np.array([])
    cuts = np.unique(np.concatenate([edges, brk]))
    lo, hi = cuts[:-1], cuts[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    cell = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, len(rho) - 1)
    dens = rho[cell]
    g, wq = np.polynomial.legendre.leggauss(nodes)
    if k == 0:
        x = mid[:, None] + 0.5 * (hi - lo)[:, None] * g[None, :]
        vals = X(x) * dphi(x) * wq[None, :] * 0.5 * (hi - lo)[:, None]
        return complex(np.sum(vals.sum(axis=1) * dens))
    ulo, uhi = m.iterate(lo, k), m.iterate(hi, k)
    u = 0.5 * (ulo + uhi)[:, None] + 0.5 * (uhi - ulo)[:, None] * g[None, :]
    x = _inverse_on_laps(m, k, u, np.repeat(lo[:, None], nodes, 1), np.repeat(hi[:, None], nodes, 1))
    vals = X(x) * dphi(u) * wq[None, :] * 0.5 * (uhi - ulo)[:, None]
    return complex(np.sum(vals.sum(axis=1) * dens))


def direct_terms(m: UnimodalMap, X, phi, rho, edges, K_terms, nodes=8):
    """The coefficients ``I_k``, ``k = 0..K_terms``; they do not depend on ``z``."""
    dphi = phi.derivative if isinstance(phi, Observable) else phi.df
    return np.array([direct_term(m, X, dphi, rho, edges, k, nodes) for k in range(K_terms + 1)])


def susceptibility_direct(m: UnimodalMap, X, phi, rho, edges, z, K_terms, nodes=8, terms=None):
    """``sum_{k<=K} z^k int X (phi' o f^k) (f^k)' rho dx`` (oracle for small ``|z|``).

    Pass ``terms`` from an earlier call to reuse them at a new ``z``.
    """
    z = complex(z)
    if terms is None:
        terms = direct_terms(m, X, phi, rho, edges, K_terms, nodes)
    terms = np.asarray(terms)[: K_terms + 1]
    return complex(np.sum(terms * z ** np.arange(len(terms)))), terms


def direct_tail_bound(m, X, phi, rho, edges, z, K_terms):
    """Bound for the terms beyond ``K_terms``: ``|I_k| <= Var(X rho) sup|phi|``.

    Integrating by parts, each term equals ``-int phi o f^k d(X rho)``.
    """
    centers = 0.5 * (edges[1:] + edges[:-1])
    xr = np.asarray(X(edges), dtype=complex)
    # variation of X * rho: jumps of rho at edges plus variation of X inside cells
    jumps = np.abs(np.diff(np.concatenate([[0.0], rho, [0.0]]))) * np.abs(xr)
    inside = np.abs(np.diff(xr)) * np.abs(rho)
    var = float(jumps.sum() + inside.sum())
    sup_phi = float(np.max(np.abs(phi(centers))))
    r = abs(complex(z))
    return var * sup_phi * r ** (K_terms + 1) / (1 - r)


# ---------------------------------------------------------------- export


def write_series_csv(path, rows, header_lines=()):
    """Rows of ``(z, SeriesValue)`` as ``re_z, im_z, re_value, im_value, tail_bound, K``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["re_z", "im_z", "re_value", "im_value", "tail_bound", "K"])
        for z, sv in rows:
            z = complex(z)
            v = complex(sv.value)
            w.writerow([repr(z.real), repr(z.imag), repr(v.real), repr(v.imag), repr(float(sv.tail)), sv.K])
