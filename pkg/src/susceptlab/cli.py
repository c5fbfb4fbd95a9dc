"""Command-line front end: ``susceptlab run <command> --config F --out D`` and ``susceptlab verify <tag>``.

Exit status: 0 on success, 2 when the config or a parameter fails
validation (nothing is written), 3 on numeric failure (the failure is
serialized into ``<command>.json``).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
from dataclasses import replace

import numpy as np
import yaml

from . import __version__
from .acim import build_ulam, saltus_decomposition, stationary_density
from .diagnostics import (
    SectorSpec,
    geometric_evaluator,
    hecke_evaluator,
    hecke_rrl_check,
    lil_envelope_check,
    lil_ratio,
    nontangential_limit,
    nt_value,
    power_series_evaluator,
    radial_scan,
    scalar_evaluator,
    wiener_wintner_check,
)
from .errors import NotFound, NumericFailure
from .maps import postcritical_orbit
from .response import ResponseConfig, birkhoff_typical_precritical, response_report, _outer_depth
from .rightlimits import breuer_simon_witness, complete_orbit_check
from .scenario import ConfigError, header, header_lines, load_scenario, load_yaml, validate
from .series import _geometric_K, susceptibility_eval

GOLDEN = (math.sqrt(5) - 1) / 2
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "acim": {"N": 4096, "orbit_length": 100_000, "eps": 1e-8, "method": "consistent"},
    "orbit": {"length": 1000},
    "suscept": {"N": 4096, "orbit_length": 200_000, "tol": 1e-10, "radii": [0.3, 0.6, 0.9], "angles": 8,
                "side": "inner"},
    "boundary-scan": {"series": "sigma", "arcs": [[0.1, 0.4], [2.0, 2.5]], "j_min": 4, "j_max": 10,
                      "orbit_length": 1_000_000, "tol": 1e-8, "theta": GOLDEN},
    "nt-limit": {"series": "psi", "omega": 0.0, "side": "inner", "order": 0, "weight": "none", "j_min": 5,
                 "j_max": 14, "N": 8192, "orbit_length": 1_000_000, "tol": 1e-9, "center": True},
    "ww": {"omegas": [0.0, 0.5, 1.0, 2.0, 3.0], "ms": [1000, 10_000, 100_000, 1_000_000], "center": True},
    "lil": {"omega": 1.0, "ms": [1000, 10_000, 100_000, 1_000_000], "r_fit_points": 8, "r_check_points": 33,
            "log10_gap_min": 2.0, "log10_gap_max": 6.0, "center": True},
    "witness": {"delta": 0.05, "orbit_length": 1_000_000, "max_ell": 12, "W": 0},
    "response": {k: getattr(ResponseConfig(), k) for k in ResponseConfig.__dataclass_fields__},
    "hecke": {"theta": GOLDEN, "K": 200, "count": 20, "r_min": 1.1, "r_max": 3.0},
}
COMMANDS = tuple(DEFAULTS)


class Artifacts:
    """Files staged in a scratch directory and moved into place at the end."""

    def __init__(self, head):
        self.head = head
        self.dir = tempfile.mkdtemp(prefix="susceptlab-")
        self.names = []

    def path(self, name):
        self.names.append(name)
        return os.path.join(self.dir, name)

    def csv(self, name, columns, rows):
        with open(self.path(name), "w", newline="") as fh:
            for line in header_lines(self.head):
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def json(self, name, payload):
        with open(self.path(name), "w") as fh:
            json.dump({"header": self.head, **payload}, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def publish(self, out):
        os.makedirs(out, exist_ok=True)
        for name in self.names:
            shutil.move(os.path.join(self.dir, name), os.path.join(out, name))
        self.discard()

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _pair(v):
    v = complex(v)
    return [v.real, v.imag]


def _orbit_centered(sc, orbit):
    """Observable centred by its average along the orbit."""
    phi = sc.phi()
    return phi.centered(float(np.mean(np.real(phi(orbit.points)))))


def _grid_centered(sc, m, orbit, N):
    """Observable centred by the Ulam mean at ``N``, with the density it came from."""
    phi = sc.phi()
    op = build_ulam(m, N)
    dens = saltus_decomposition(m, orbit, stationary_density(op), op)
    return phi.centered(dens.mean(phi(op.centers))), dens


def _choice(p, key, options):
    if p[key] not in options:
        raise ConfigError(f"{key} must be one of {options}, got {p[key]!r}")


# ---------------------------------------------------------------- commands


def cmd_acim(sc, m, p, art, workers):
    orbit = postcritical_orbit(m, p["orbit_length"])
    _choice(p, "method", ("consistent", "extrapolated"))
    op = build_ulam(m, p["N"])
    rho = stationary_density(op)
    d = saltus_decomposition(m, orbit, rho, op, eps=p["eps"], method=p["method"])
    art.csv("density.csv", ("x", "rho", "rho_sal", "rho_reg"),
            zip(op.centers, d.rho, d.rho_sal, d.rho_reg))
    art.csv("jumps.csv", ("n", "c_n", "s_n"),
            ((n + 1, float(c), float(s)) for n, (c, s) in enumerate(zip(d.jump_locations, d.jumps))))
    summary = {"s1": d.s1, "s1_extrapolated": d.s1_extrapolated, "n_jumps": int(len(d.jumps)),
               "tail_bound": d.tail_bound, "reg_residual": d.reg_residual, "method": d.method,
               "l1_gap_to_uniform": float(op.l1(d.rho - 1.0 / (m.b - m.a)))}
    art.json("acim.json", summary)
    return summary


def cmd_orbit(sc, m, p, art, workers):
    orbit = postcritical_orbit(m, p["length"])
    D = np.concatenate(([1.0], orbit.derivs))
    art.csv("orbit.csv", ("k", "c_k", "D_k_minus_1"), ((k + 1, float(x), float(D[k])) for k, x in enumerate(orbit.points)))
    pp = orbit.preperiodicity
    summary = {"length": len(orbit), "preperiodic": pp is not None,
               "preperiodicity": None if pp is None else {"m": pp.m, "p": pp.p, "proven": pp.proven}}
    art.json("orbit.json", summary)
    return summary


def cmd_suscept(sc, m, p, art, workers):
    _choice(p, "side", ("inner", "outer"))
    orbit = postcritical_orbit(m, p["orbit_length"])
    phi, dens = _grid_centered(sc, m, orbit, p["N"])
    X = sc.perturbation_for(m, orbit)
    angles = 2 * np.pi * np.arange(p["angles"]) / p["angles"]
    zs = [r * np.exp(1j * a) for r in p["radii"] for a in angles]
    pre = None
    if p["side"] == "outer":
        if min(p["radii"]) <= 1:
            raise ConfigError("outer side needs radii above 1")
        sup = float(np.max(np.abs(phi(np.linspace(m.c2, m.c1, 4097)))))
        depth = _geometric_K(sup, 1 / min(p["radii"]), p["tol"]) + 16
        pre, _ = birkhoff_typical_precritical(m, dens, depth, ResponseConfig(seed=sc.seed, tol=p["tol"]))
    rows = []
    for z in zs:
        v = susceptibility_eval(m, orbit, X, phi, dens, z, p["tol"], side=p["side"], pre=pre)
        U = v.U.value if v.U is not None else complex("nan")
        S = v.sigma.value if v.sigma is not None else complex("nan")
        V = v.V.value if v.V is not None else complex("nan")
        rows.append((complex(z).real, complex(z).imag, v.value.real, v.value.imag, float(v.tail), v.route,
                     U.real, U.imag, S.real, S.imag, V.real, V.imag, complex(v.hol).real, complex(v.hol).imag))
    art.csv("suscept.csv", ("re_z", "im_z", "re_psi", "im_psi", "tail", "route", "re_U", "im_U", "re_sigma",
                            "im_sigma", "re_V", "im_V", "re_hol", "im_hol"), rows)
    summary = {"points": len(rows), "s1": dens.s1, "phi_mean": phi.mean}
    art.json("suscept.json", summary)
    return summary


def _series_evaluator(sc, m, p):
    _choice(p, "series", ("sigma", "geometric", "hecke"))
    if p["series"] == "geometric":
        return geometric_evaluator(p["tol"])
    if p["series"] == "hecke":
        return hecke_evaluator(p["theta"], p["tol"])
    orbit = postcritical_orbit(m, p["orbit_length"])
    phi = _orbit_centered(sc, orbit)
    sup = float(np.max(np.abs(phi(orbit.points[:100_000]))))
    return power_series_evaluator(lambda K: phi(orbit.points[:K]), sup, p["tol"])


def cmd_boundary_scan(sc, m, p, art, workers):
    ev = _series_evaluator(sc, m, p)
    rs = 1 - 2.0 ** -np.arange(p["j_min"], p["j_max"] + 1)
    out = []
    for i, (w1, w2) in enumerate(p["arcs"]):
        rep = radial_scan(ev, float(w1), float(w2), rs)
        rep.write_csv(art.path(f"scan_{i}.csv"), header_lines(art.head))
        out.append(rep.to_json())
    summary = {"series": p["series"], "arcs": out, "verdicts": [r["verdict"] for r in out]}
    art.json("boundary_scan.json", summary)
    return summary


def cmd_nt_limit(sc, m, p, art, workers):
    _choice(p, "series", ("psi", "sigma"))
    _choice(p, "side", ("inner", "outer"))
    _choice(p, "weight", ("none", "linear"))
    orbit = postcritical_orbit(m, p["orbit_length"])
    sector = SectorSpec(p["omega"], j_min=p["j_min"], j_max=p["j_max"], side=p["side"])
    if p["series"] == "psi":
        phi, dens = _grid_centered(sc, m, orbit, p["N"])
        X = sc.perturbation_for(m, orbit)
        pre = None
        if p["side"] == "outer":
            cfg = ResponseConfig(seed=sc.seed, tol=p["tol"], j_max=p["j_max"])
            pre, _ = birkhoff_typical_precritical(m, dens, _outer_depth(cfg, 1.0), cfg)
        ev = scalar_evaluator(lambda z: susceptibility_eval(m, orbit, X, phi, dens, z, p["tol"], side=p["side"], pre=pre))
    else:
        phi = _orbit_centered(sc, orbit) if p["center"] else sc.phi()
        if p["side"] == "outer":
            raise ConfigError("series 'sigma' on the outer side: use series 'psi'")
        sup = float(np.max(np.abs(phi(orbit.points[:100_000]))))
        ev = power_series_evaluator(lambda K: phi(orbit.points[:K]), sup, p["tol"])
    rep = nontangential_limit(ev, sector, weight=p["weight"], order=p["order"])
    rep.write_csv(art.path("nt_limit.csv"), header_lines(art.head))
    lim, err = nt_value(rep)
    summary = {"limit": _pair(lim), "err": err, "verdict": rep.verdict, "scan": rep.to_json()}
    art.json("nt_limit.json", summary)
    return summary


def cmd_ww(sc, m, p, art, workers):
    orbit = postcritical_orbit(m, int(max(p["ms"])))
    phi = _orbit_centered(sc, orbit) if p["center"] else sc.phi()
    rep = wiener_wintner_check(orbit, phi, [float(w) for w in p["omegas"]], [int(k) for k in p["ms"]])
    rep.write_csv(art.path("ww.csv"), header_lines(art.head))
    summary = {"verdict": rep.verdict, "trend": rep.trend}
    art.json("ww.json", summary)
    return summary


def cmd_lil(sc, m, p, art, workers):
    orbit = postcritical_orbit(m, int(max(p["ms"])))
    phi = _orbit_centered(sc, orbit) if p["center"] else sc.phi()
    rep = lil_ratio(orbit, phi, p["omega"], [int(k) for k in p["ms"]])
    rep.write_csv(art.path("lil_ratio.csv"), header_lines(art.head))
    gaps_fit = np.logspace(-p["log10_gap_min"], -p["log10_gap_max"], p["r_fit_points"])
    gaps_chk = np.logspace(-p["log10_gap_min"], -p["log10_gap_max"], p["r_check_points"])
    env = lil_envelope_check(1 - gaps_fit, 1 - gaps_chk)
    env.write_csv(art.path("lil_envelope.csv"), header_lines(art.head))
    summary = {"ratio": {"verdict": rep.verdict, "trend": rep.trend},
               "envelope": {"verdict": env.verdict, "trend": env.trend}}
    art.json("lil.json", summary)
    return summary


def cmd_witness(sc, m, p, art, workers):
    orbit = postcritical_orbit(m, p["orbit_length"])
    phi = sc.phi()
    w = breuer_simon_witness(m, orbit, phi, p["delta"], max_ell=p["max_ell"], W=p["W"] or None)
    summary = {**w.to_json(), "agreement": float(w.agreement()), "difference_at_zero": float(w.difference_at_zero()),
               "phi_difference_at_zero": float(abs(w.difference_at_zero(phi))),
               "orbit_checks": [complete_orbit_check(m, win).passed for win in (w.window, w.window_tilde)]}
    art.json("witness.json", summary)
    return summary


def cmd_response(sc, m, p, art, workers):
    cfg = ResponseConfig(**{**p, "workers": max(int(p["workers"]), workers), "seed": sc.seed})
    X = sc.perturbation_for(m)
    rep = response_report(m, X, sc.phi(), cfg)
    art.json("response.json", rep)
    return {k: rep[k] for k in ("fd", "formula", "nt_inner", "nt_outer", "horizontality")}


def cmd_hecke(sc, m, p, art, workers):
    rng = np.random.default_rng(sc.seed)
    r = rng.uniform(p["r_min"], p["r_max"], p["count"])
    a = rng.uniform(0, 2 * np.pi, p["count"])
    rows = []
    for ri, ai in zip(r, a):
        z = ri * np.exp(1j * ai)
        gap, tails = hecke_rrl_check(p["theta"], z, p["K"])
        rows.append((z.real, z.imag, float(gap), float(tails), bool(gap <= tails)))
    art.csv("hecke.csv", ("re_z", "im_z", "gap", "tail_bound", "within_tails"), rows)
    summary = {"max_gap": max(r[2] for r in rows), "max_tails": max(r[3] for r in rows),
               "all_within_tails": all(r[4] for r in rows)}
    art.json("hecke.json", summary)
    return summary


HANDLERS = {
    "acim": cmd_acim, "orbit": cmd_orbit, "suscept": cmd_suscept, "boundary-scan": cmd_boundary_scan,
    "nt-limit": cmd_nt_limit, "ww": cmd_ww, "lil": cmd_lil, "witness": cmd_witness, "response": cmd_response,
    "hecke": cmd_hecke,
}


def _split_top_level(text):
    """Split on commas and semicolons that are not inside brackets."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch in ",;" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_overrides(text):
    """``key=value`` pairs separated by commas or semicolons; values are read as YAML."""
    out = {}
    if not text:
        return out
    for item in _split_top_level(text):
        if not item.strip():
            continue
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = load_yaml(v)
        except yaml.YAMLError:
            raise ConfigError(f"override {item!r} has an unreadable value") from None
    return out


def run(command, config, out, workers=1, seed=None, tol_overrides=None, stream=None):
    """Run one command; returns the exit status."""
    stream = sys.stdout if stream is None else stream
    try:
        if command not in HANDLERS:
            raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
        sc = load_scenario(config)
        if seed is not None:
            sc = replace(sc, seed=seed, raw={**sc.raw, "seed": seed})
        m = validate(sc)
        params = sc.command_params(command, DEFAULTS[command], parse_overrides(tol_overrides))
    except (ConfigError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    art = Artifacts(header(sc, command, params))
    try:
        summary = HANDLERS[command](sc, m, params, art, workers)
    except (NumericFailure, NotFound) as exc:
        art.discard()
        art = Artifacts(art.head)
        failure = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NotFound):
            failure["finite_orbit"] = exc.finite_orbit
        art.json(f"{command.replace('-', '_')}.json", {"error": failure})
        art.publish(out)
        print(f"numeric failure: {failure['type']}: {failure['message']}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        art.discard()
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BaseException:
        art.discard()
        raise
    art.publish(out)
    print(json.dumps(summary, sort_keys=True, default=_json_default), file=stream)
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="susceptlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="action", required=True)
    pr = sub.add_parser("run", help="run one command on a scenario")
    pr.add_argument("command", choices=COMMANDS)
    pr.add_argument("config_pos", nargs="?", help="config path (same as --config)")
    pr.add_argument("out_pos", nargs="?", help="output directory (same as --out)")
    pr.add_argument("--config")
    pr.add_argument("--out")
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--tol-overrides", default="", help="key=value pairs separated by commas or semicolons")
    pv = sub.add_parser("verify", help="run acceptance criteria")
    pv.add_argument("suite", choices=("exact", "oracle", "all"))
    args = parser.parse_args(argv)
    if args.action == "verify":
        from .verify import run_suite

        return 0 if run_suite(args.suite) else 1
    config = args.config or args.config_pos
    out = args.out or args.out_pos
    if not config or not out:
        parser.error("run needs a config and an output directory")
    if args.workers < 1:
        parser.error("--workers must be positive")
    return run(args.command, config, out, args.workers, args.seed, args.tol_overrides)


if __name__ == "__main__":
    sys.exit(main())
