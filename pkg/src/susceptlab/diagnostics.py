"""Boundary and limit diagnostics for power series on the unit disc.

Evaluators used here are vectorised callables ``ev(z) -> (values, errs)``
taking and returning arrays; :func:`power_series_evaluator` and
:func:`scalar_evaluator` build them. All verdicts are statements about
finite data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OrbitTooShort, TailUnreachable
from .maps import PostcriticalOrbit

GROWTH = "growth-consistent-with-strong-boundary"
BOUNDED = "bounded"
GROWTH_SLOPE = 0.1
MIN_DOUBLINGS = 4
NT_MIN_RATIO = 2.0**-0.5


# ---------------------------------------------------------------- evaluators


def _as_array(z):
    return np.atleast_1d(np.asarray(z, dtype=complex))


def eval_power_series(coeffs, z, chunk=4096):
    """``sum_k coeffs[k] z^k`` for an array of ``z``, in coefficient blocks."""
    z = _as_array(z)
    coeffs = np.asarray(coeffs, dtype=complex)
    out = np.zeros(z.shape, dtype=complex)
    if len(coeffs) <= chunk:
        for a in coeffs[::-1]:
            out = out * z + a
        return out
    powers = np.empty((len(z), chunk), dtype=complex)
    powers[:, 0] = 1.0
    np.cumprod(np.broadcast_to(z[:, None], (len(z), chunk - 1)), axis=1, out=powers[:, 1:])
    step = powers[:, -1] * z
    scale = np.ones_like(z)
    for k0 in range(0, len(coeffs), chunk):
        block = coeffs[k0 : k0 + chunk]
        out += scale * (powers[:, : len(block)] @ block)
        scale = scale * step
    return out


def power_series_evaluator(coeffs, sup, tol=1e-10):
    """Evaluator for ``sum a_k z^k`` with ``|a_k| <= sup`` inside the unit disc.

    ``coeffs`` is an array or a callable ``K -> first K coefficients``. The
    truncation index is chosen for the largest ``|z|`` in each call so that
    the certified tail ``sup |z|^K / (1 - |z|)`` is at most ``tol``.
    """

    def ev(z):
        z = _as_array(z)
        r = float(np.max(np.abs(z)))
        if r >= 1:
            raise TailUnreachable("power series evaluator needs |z| < 1")
        if sup == 0:
            return np.zeros_like(z), np.zeros(z.shape)
        K = max(1, int(math.ceil(math.log(tol * (1 - r) / sup) / math.log(r)))) if r > 0 else 1
        a = coeffs(K) if callable(coeffs) else np.asarray(coeffs)
        if len(a) < K:
            raise TailUnreachable(f"need {K} coefficients, have {len(a)}")
        vals = eval_power_series(a[:K], z)
        tails = sup * np.abs(z) ** K / (1 - np.abs(z))
        return vals, tails

    return ev


def scalar_evaluator(fn):
    """Wrap ``fn(z) -> value | (value, err) | object with .value/.tail``."""

    def ev(z):
        z = _as_array(z)
        vals = np.empty(z.shape, dtype=complex)
        errs = np.empty(z.shape)
        for i, zi in enumerate(z):
            out = fn(complex(zi))
            if isinstance(out, tuple):
                v, e = out
            elif hasattr(out, "value"):
                v, e = out.value, getattr(out, "tail", 0.0)
            else:
                v, e = out, 0.0
            vals[i] = v
            errs[i] = e
        return vals, errs

    return ev


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class SectorSpec:
    """Approach to ``e^{i omega}`` along the ray ``e^{i omega}(1 - 2^{-j} e^{i ray})``.

    ``ray`` is the angle of approach measured from the radius and must stay
    within ``half_aperture``. The outer side evaluates at ``1/z`` for the
    same points.
    """

    omega: float = 0.0
    half_aperture: float = math.pi / 4
    j_min: int = 5
    j_max: int = 14
    side: str = "inner"
    ray: float = 0.0

    def __post_init__(self):
        if not 0 < self.half_aperture < math.pi / 2:
            raise ValueError("half-aperture must lie in (0, pi/2)")
        if abs(self.ray) >= self.half_aperture:
            raise ValueError("approach ray must lie strictly inside the sector")
        if self.side not in ("inner", "outer"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.j_max - self.j_min < 2:
            raise ValueError("need at least three radii")
        if self.j_min < 2:
            raise ValueError("j_min must be at least 2")
        z = self.inner_points()
        gap = np.abs(1 - z * np.exp(-1j * self.omega))
        depth = 1 - np.abs(z)
        if np.any(depth <= 0) or np.any(gap > self.constant * depth + 1e-14) or np.any(depth > gap + 1e-14):
            raise ValueError("sample points violate the sector inequality")

    @property
    def constant(self):
        """``C(S)`` with ``1 - |z| <= |1 - z e^{-i omega}| <= C(S) (1 - |z|)`` on the samples."""
        return 2.0 / math.cos(self.half_aperture)

    @property
    def js(self):
        return np.arange(self.j_min, self.j_max + 1)

    @property
    def radii(self):
        return 1.0 - 2.0 ** (-self.js.astype(float))

    def inner_points(self):
        delta = 2.0 ** (-self.js.astype(float))
        return np.exp(1j * self.omega) * (1 - delta * np.exp(1j * self.ray))

    def points(self):
        z = self.inner_points()
        return z if self.side == "inner" else 1.0 / z

    def check_domain(self, lam):
        """Inner points in ``1/lam < |z| < 1``; outer points in ``1 < |z| < 1.05``."""
        r = np.abs(self.points())
        if self.side == "inner":
            return bool(np.all((r > 1 / lam) & (r < 1)))
        return bool(np.all((r > 1) & (r < 1.05)))


@dataclass(frozen=True)
class ScanReport:
    kind: str
    abscissae: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    trend: dict = field(default_factory=dict)
    verdict: str = ""
    columns: tuple = ()
    rows: tuple = ()

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            for k in sorted(self.trend):
                fh.write(f"# {k}: {self.trend[k]}\n")
            fh.write(f"# verdict: {self.verdict}\n")
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def to_json(self):
        vals = np.asarray(self.values).ravel()
        return {
            "kind": self.kind,
            "abscissae": [float(x) for x in np.real(self.abscissae)],
            "values": [[float(v.real), float(v.imag)] for v in vals.astype(complex)],
            "errors": [float(e) for e in self.errors],
            "trend": self.trend,
            "verdict": self.verdict,
        }


# ---------------------------------------------------------------- radial scans


def _arc_integral(ev, r, w1, w2, panels):
    dw = (w2 - w1) / panels
    w = w1 + (np.arange(panels) + 0.5) * dw
    vals, tails = ev(r * np.exp(1j * w))
    return float(np.sum(np.abs(vals)) * dw), float(np.max(tails)), float(np.sum(tails) * dw)


def radial_scan(ev, w1, w2, rs, panels=1024, max_panels=2**14, rel=0.01):
    """``int_{w1}^{w2} |g(r e^{i w})| dw`` for each ``r`` and a growth verdict.

    Midpoint panels are doubled until the integral moves by less than
    ``rel``. The verdict is the growth label when the integrals increase
    over the last ``MIN_DOUBLINGS`` doublings of ``1/(1-r)`` and the fitted
    log-log slope over those samples is at least ``GROWTH_SLOPE``.
    """
    if not w1 < w2:
        raise ValueError("need w1 < w2")
    rs = np.asarray(rs, dtype=float)
    if np.any(rs >= 1) or np.any(np.diff(rs) <= 0):
        raise ValueError("radii must increase and stay below 1")
    integrals, tails, used = [], [], []
    for r in rs:
        n = panels
        val, tmax, tint = _arc_integral(ev, r, w1, w2, n)
        while n < max_panels:
            nxt, tmax, tint = _arc_integral(ev, r, w1, w2, 2 * n)
            n *= 2
            done = abs(nxt - val) <= rel * abs(nxt)
            val = nxt
            if done:
                break
        integrals.append(val)
        tails.append(tmax)
        used.append(n)
    integrals = np.array(integrals)
    x = -np.log(1 - rs)
    span = (x[-1] - x[0]) / math.log(2)
    # samples covering the last MIN_DOUBLINGS doublings
    tail_idx = np.nonzero(x >= x[-1] - MIN_DOUBLINGS * math.log(2) - 1e-12)[0]
    slope = float(np.polyfit(x[tail_idx], np.log(integrals[tail_idx]), 1)[0]) if len(tail_idx) >= 2 else 0.0
    increasing = bool(np.all(np.diff(integrals[tail_idx]) > 0))
    verdict = GROWTH if (span >= MIN_DOUBLINGS and increasing and slope >= GROWTH_SLOPE) else BOUNDED
    trend = {"slope": slope, "increasing": increasing, "doublings": float(span), "arc": [float(w1), float(w2)],
             "note": "finite-data growth diagnostic, not a proof"}
    rows = tuple((float(r), float(v), float(t)) for r, v, t in zip(rs, integrals, tails))
    return ScanReport("radial", rs, integrals, np.array(tails), trend, verdict, ("r", "integral", "tail_max"), rows)


# ---------------------------------------------------------------- NT limits


def cauchy_derivative(ev, z, order, radius, nodes=32):
    """``order``-th derivative at each ``z`` by the trapezoid rule on a circle of ``radius``."""
    z = _as_array(z)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), z.shape)
    theta = 2 * np.pi * np.arange(nodes) / nodes
    ring = z[:, None] + radius[:, None] * np.exp(1j * theta)[None, :]
    vals, errs = ev(ring.ravel())
    vals = vals.reshape(ring.shape)
    errs = np.asarray(errs).reshape(ring.shape)
    fac = math.factorial(order)
    kernel = np.exp(-1j * order * theta)[None, :]
    d = fac * np.mean(vals * kernel, axis=1) / radius**order
    e = fac * np.max(errs, axis=1) / radius**order
    return d, e


def nontangential_limit(ev, sector: SectorSpec, weight="none", order=0, min_ratio=NT_MIN_RATIO):
    """Limit of the (weighted, differentiated) evaluator along the sector's ray.

    ``weight='linear'`` multiplies by ``(z - e^{i omega})`` (``z`` being the
    evaluation point). ``order > 0`` differentiates by a Cauchy integral
    over a circle of radius ``(1 - |z|)/4`` (inner) or ``(|z| - 1)/4``
    (outer) that stays on the same side of the unit circle.

    The estimate is the last sample. With ``d1, d2`` the last two
    successive differences and ``q = max(|d2|/|d1|, min_ratio)``, the error
    is ``|d2| / (1 - q)`` plus the evaluator error. The floor on ``q``
    allows for the ``(1-r)^{1/2}`` decay expected of ``U sigma`` terms.
    """
    if weight not in ("none", "linear"):
        raise ValueError(f"unknown weight {weight!r}")
    z = sector.points()
    vertex = np.exp(1j * sector.omega)
    if order == 0:
        vals, errs = ev(z)
    else:
        radius = np.abs(1 - np.abs(z)) / 4
        vals, errs = cauchy_derivative(ev, z, order, radius)
    vals = np.asarray(vals, dtype=complex)
    errs = np.asarray(errs, dtype=float)
    if weight == "linear":
        w = z - vertex
        vals = vals * w
        errs = errs * np.abs(w)
    d1 = abs(vals[-2] - vals[-3])
    d2 = abs(vals[-1] - vals[-2])
    q = max(d2 / d1 if d1 > 0 else 0.0, min_ratio)
    if q < 1:
        err = d2 / (1 - q) + errs[-1]
        verdict = "converged"
    else:
        err = d1 + d2 + errs[-1]
        verdict = "not-converged"
    succ = np.concatenate([[np.nan], np.abs(np.diff(vals))])
    trend = {"limit": [float(vals[-1].real), float(vals[-1].imag)], "err": float(err), "ratio": float(q),
             "omega": float(sector.omega), "side": sector.side, "weight": weight, "order": int(order),
             "C_S": float(sector.constant)}
    rows = tuple(
        (int(j), float(r), float(v.real), float(v.imag), float(s) if np.isfinite(s) else "")
        for j, r, v, s in zip(sector.js, sector.radii, vals, succ)
    )
    return ScanReport("nt", sector.js, vals, errs, trend, verdict, ("j", "r_j", "re_value", "im_value", "err_est"), rows)


def nt_value(report: ScanReport):
    """``(limit, err)`` from a :func:`nontangential_limit` report."""
    re, im = report.trend["limit"]
    return complex(re, im), float(report.trend["err"])


# ---------------------------------------------------------------- ergodic sums


def _orbit_values(orbit, phi, m_max):
    if m_max > len(orbit):
        raise OrbitTooShort(f"need {m_max} orbit points, have {len(orbit)}")
    return np.asarray(phi(orbit.points[:m_max]), dtype=complex)


def wiener_wintner_check(orbit: PostcriticalOrbit, phi, omegas, ms):
    """``|(1/m) sum_{k<m} e^{i omega k} phi(c_{k+1})|`` over ``m``, per ``omega``.

    An ``omega`` counts as decaying when the value at the last ``m`` is at
    most half the largest value over ``m`` up to a tenth of it.
    Un-normalised observables at ``omega = 0`` are flagged, not rejected.
    """
    ms = np.asarray(sorted(ms), dtype=np.int64)
    vals = _orbit_values(orbit, phi, int(ms[-1]))
    normalized = bool(getattr(phi, "normalized", False))
    rows, moduli, per = [], [], {}
    for w in omegas:
        S = np.cumsum(np.exp(1j * w * np.arange(len(vals))) * vals)
        mod = np.abs(S[ms - 1]) / ms
        moduli.append(mod)
        ref = np.nonzero(ms <= ms[-1] // 10)[0]
        decaying = bool(len(ref) and mod[-1] * 2 <= mod[ref].max())
        per[float(w)] = decaying
        rows.extend((float(w), int(m), float(v)) for m, v in zip(ms, mod))
    flags = []
    if any(abs(w) < 1e-15 for w in omegas) and not normalized:
        flags.append("omega=0 with un-normalised observable")
    verdict = "decaying" if all(per.values()) else "not-decaying"
    trend = {"per_omega": {str(k): v for k, v in per.items()}, "flags": flags}
    return ScanReport("ww", ms, np.array(moduli), np.zeros(len(ms)), trend, verdict, ("omega", "m", "modulus"), tuple(rows))


def van_der_corput_slack(u, n, h):
    """Right side minus left side of the van der Corput inequality for ``u_0..u_{n-1}``."""
    u = np.asarray(u, dtype=complex)[:n]
    if not 1 <= h <= n - 1:
        raise ValueError("need 1 <= h <= n-1")
    lhs = abs(u.sum()) ** 2
    first = (n + h) / (h + 1) * float(np.sum(np.abs(u) ** 2))
    corr = sum((h + 1 - l) * abs(np.vdot(u[l:], u[: n - l])) for l in range(1, h + 1))
    return first + 2 * (n + h) / (h + 1) ** 2 * corr - lhs


def _lil_scale(m):
    m = np.asarray(m, dtype=float)
    return np.sqrt(m * np.log(np.log(m)))


def lil_ratio(orbit: PostcriticalOrbit, phi, omega, ms):
    """``|S_m(e^{i omega})| / sqrt(m log log m)`` with its running sup.

    ``plateau`` is true when the running sup grows by less than 10% over
    the last decade of ``m``.
    """
    ms = np.asarray(sorted(ms), dtype=np.int64)
    if ms[0] < 3:
        raise ValueError("m must be at least 3")
    vals = _orbit_values(orbit, phi, int(ms[-1]))
    S = np.cumsum(np.exp(1j * omega * np.arange(len(vals))) * vals)
    ratio = np.abs(S[ms - 1]) / _lil_scale(ms)
    run = np.maximum.accumulate(ratio)
    ref = np.nonzero(ms <= ms[-1] // 10)[0]
    plateau = bool(len(ref) and run[-1] <= 1.1 * run[ref[-1]])
    rows = tuple((int(m), float(r), float(s)) for m, r, s in zip(ms, ratio, run))
    trend = {"running_sup": float(run[-1]), "plateau": plateau, "omega": float(omega)}
    return ScanReport("lil", ms, ratio, np.zeros(len(ms)), trend, "plateau" if plateau else "growing",
                      ("m", "ratio", "running_sup"), rows)


def lil_series(r, rel_tol=1e-12, chunk=1 << 20, max_terms=10**9):
    """``L(r) = sum_{k>=3} r^{k-1} sqrt(k log log k)`` and a bound on the tail.

    For ``k >= K`` the term ratio is at most
    ``q_K = r sqrt((1 + 1/K) loglog(K+1) / loglog K)``, so the tail after
    ``K`` is at most ``t_K / (1 - q_K)``.
    """
    if not 0 < r < 1:
        raise ValueError("need 0 < r < 1")
    total, k0 = 0.0, 3
    logr = math.log(r)
    while True:
        k = np.arange(k0, k0 + chunk, dtype=float)
        terms = np.exp((k - 1) * logr) * _lil_scale(k)
        total += float(terms.sum())
        K = k0 + chunk
        q = r * math.sqrt((1 + 1 / K) * math.log(math.log(K + 1)) / math.log(math.log(K)))
        if q < 1:
            tail = math.exp((K - 1) * logr) * float(_lil_scale(K)) / (1 - q)
            if tail <= rel_tol * total:
                return total, tail
        k0 = K
        if k0 > max_terms:
            raise TailUnreachable(f"L({r}) needs more than {max_terms} terms")


def lil_envelope(r, loglog=True):
    """``(1-r)^{-3/2}``, times ``(log log 1/(1-r))^{1/2}`` when ``loglog``."""
    s = 1 - np.asarray(r, dtype=float)
    env = s**-1.5
    return env * np.sqrt(np.log(np.log(1 / s))) if loglog else env


def lil_envelope_check(r_fit, r_check=None, loglog=True):
    """Fit the envelope ``M (1-r)^{-3/2} (log log 1/(1-r))^{1/2}`` and test it.

    ``M`` is the largest ratio ``L / envelope`` on ``r_fit``; the pointwise
    check runs on ``r_check`` (default: ``r_fit``). The slope is the
    least-squares slope of ``log L`` against ``log(1-r)`` on ``r_fit``.
    The log-log factor is only positive for ``r > 1 - e^{-e}``; pass
    ``loglog=False`` for the plain power envelope at smaller ``r``.
    """
    r_fit = np.asarray(r_fit, dtype=float)
    r_check = r_fit if r_check is None else np.asarray(r_check, dtype=float)
    if loglog and np.any(1 - np.concatenate([r_fit, r_check]) >= math.exp(-math.e)):
        raise ValueError("envelope needs log log 1/(1-r) > 0 (r > 1 - e^{-e})")
    L_fit = np.array([lil_series(r)[0] for r in r_fit])
    slope = float(np.polyfit(np.log(1 - r_fit), np.log(L_fit), 1)[0])
    M = float(np.max(L_fit / lil_envelope(r_fit, loglog)))
    L_chk = np.array([lil_series(r)[0] for r in r_check])
    ratio = L_chk / (M * lil_envelope(r_check, loglog))
    ok = bool(np.all(ratio <= 1 + 1e-12))
    rows = tuple((float(r), float(L), float(q)) for r, L, q in zip(r_check, L_chk, ratio))
    trend = {"slope": slope, "M": M, "max_ratio": float(ratio.max()), "loglog": bool(loglog)}
    return ScanReport("lil-envelope", r_check, L_chk, np.zeros(len(r_check)), trend,
                      "envelope-holds" if ok else "envelope-violated", ("r", "L", "ratio_to_envelope"), rows)


def sector_constant_fit(z, values, omega):
    """Fitted ``C(S)``: the largest ``|sigma(z)|`` over ``|z - e^{i omega}|^{-1/2} (loglog)^{1/2}``."""
    z = _as_array(z)
    d = np.abs(z - np.exp(1j * omega))
    if np.any(d >= math.exp(-math.e)):
        raise ValueError("samples must satisfy log log 1/|z - e^{i omega}| > 0")
    env = d**-0.5 * np.sqrt(np.log(np.log(1 / d)))
    return float(np.max(np.abs(values) / env))


# ---------------------------------------------------------------- Hecke reference


def hecke_coefficients(theta, K, start=0, sign=1):
    """``{n theta} - 1/2`` for ``n = sign * (start .. start+K-1)``."""
    n = sign * np.arange(start, start + K, dtype=float)
    return np.mod(n * theta, 1.0) - 0.5


def hecke_reference(theta, z, K):
    """``g(z) = sum_{k<K} ({k theta} - 1/2) z^k`` and the tail bound ``|z|^K / (2(1-|z|))``."""
    z = complex(z)
    r = abs(z)
    if r >= 1:
        raise TailUnreachable("Hecke series needs |z| < 1")
    val = complex(eval_power_series(hecke_coefficients(theta, K), z)[0])
    return val, 0.5 * r**K / (1 - r)


def hecke_outer(theta, z, K):
    """``g_{b-}(z) = -sum_{n=-1}^{-K} ({n theta} - 1/2) z^n`` for ``|z| > 1`` with its tail bound."""
    z = complex(z)
    R = abs(z)
    if R <= 1:
        raise TailUnreachable("outer Hecke series needs |z| > 1")
    b = hecke_coefficients(theta, K, start=1, sign=-1)
    val = -complex(eval_power_series(np.concatenate([[0.0], b]), 1 / z)[0])
    return val, 0.5 * R ** (-(K + 1)) / (1 - 1 / R)


def hecke_rrl_check(theta, z, K):
    """``|g_{b-}(z) - g(1/z) - 1/2|`` and its allowance: both truncation tails plus a rounding bound.

    The rounding bound is ``2 K eps`` times the absolute sum of each
    series; without it an exact cancellation up to one ulp would fail a
    tail bound of ``1e-60``.
    """
    outer, t1 = hecke_outer(theta, z, K)
    inner, t2 = hecke_reference(theta, 1 / complex(z), K + 1)
    q = 1 / abs(complex(z))
    absolute = 0.5 / (1 - q)  # bounds sum |b_n| q^n for either series
    rounding = 2 * (K + 1) * np.finfo(float).eps * (2 * absolute + 0.5)
    return abs(outer - inner - 0.5), t1 + t2 + rounding


def hecke_evaluator(theta, tol=1e-10):
    return power_series_evaluator(lambda K: hecke_coefficients(theta, K), 0.5, tol)


def geometric_evaluator(tol=1e-10):
    return power_series_evaluator(lambda K: np.ones(K), 1.0, tol)


def birkhoff_check(points, fns, means, m_min, m_max, tol):
    """Largest ``|(1/m) sum_{k<m} g(x_k) - mean_g|`` over ``m_min <= m <= m_max`` for each test function."""
    if len(points) < m_max:
        raise OrbitTooShort(f"need {m_max} points, have {len(points)}")
    x = np.asarray(points[:m_max], dtype=float)
    m = np.arange(1, m_max + 1)
    worst = []
    for g, mu in zip(fns, means):
        avg = np.cumsum(np.asarray(g(x), dtype=complex)) / m
        worst.append(float(np.max(np.abs(avg[m_min - 1 :] - mu))))
    return max(worst) <= tol, worst


def telescoping_gap(orbit, psi, omega, f, k_max):
    """Largest ``|sum_{j<k} e^{i omega j} phi(c_{j+1}) - (psi(c_1) - e^{i omega k} psi(c_{k+1}))|``
    over ``k <= k_max`` for ``phi = psi - e^{i omega} psi o f``.

    Partial sums are compensated (Kahan) so that the gap reflects the
    identity rather than accumulated rounding.
    """
    pts = orbit.points[:k_max]
    if len(pts) < k_max:
        raise OrbitTooShort(f"need {k_max} orbit points, have {len(pts)}")
    phase = np.exp(1j * omega * np.arange(k_max + 1))  # e^{i omega j}, no repeated products
    head = np.asarray(psi(pts), dtype=complex)
    nxt = np.asarray(psi(f(pts)), dtype=complex)
    terms = phase[:-1] * head - phase[1:] * nxt
    target = head[0] - phase[1:] * nxt
    worst, s, comp = 0.0, 0j, 0j
    for k in range(k_max):
        y = complex(terms[k]) - comp
        t = s + y
        comp = (t - s) - y
        s = t
        worst = max(worst, abs(s - target[k]))
    return worst
