"""Scenario files: YAML configs, validation and a canonical content hash.

A scenario looks like::

    map:
      family: tent
      params: {slope: 1.9}
    observable: x
    perturbation:
      base: x*(1-x)
      horizontal: {basis: ["x**2*(1-x)"], order: 1}
    seed: 0
    params:
      response: {N: 8192, t0: 0.001}

``params`` holds one block per command; unset keys take the command
defaults, and every value actually used is echoed into artifact headers.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import sympy
import yaml

from . import __version__
from .errors import SusceptError
from .functions import Observable, Perturbation, parse_expression
from .maps import MapSpec, UnimodalMap, build_map, postcritical_orbit
from .series import make_horizontal

TOP_KEYS = {"map", "observable", "perturbation", "seed", "params"}
MAP_KEYS = {"family", "params", "interval"}
PERTURBATION_KEYS = {"base", "horizontal"}
HORIZONTAL_KEYS = {"basis", "order"}
FAMILIES = {"tent": {"slope"}, "skewed-tent": {"height", "c"}, "polynomial-branches": {"left", "right", "c"}}
HORIZONTAL_ORBIT = 200_000


class ConfigError(SusceptError, ValueError):
    """The scenario file is malformed or fails validation."""


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-9`` (no dot) as a float, as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def load_yaml(text):
    return yaml.load(text, Loader=_Loader)


def _canonical_number(v):
    if isinstance(v, bool):
        raise ConfigError("booleans are not valid numeric parameters")
    return float(v)


def _canonical_expr(text):
    return sympy.srepr(sympy.expand(parse_expression(text)))


def _canonical(obj, expr_keys=()):
    """JSON-ready form with numbers as floats and expressions in sympy normal form."""
    if isinstance(obj, dict):
        return {str(k): (_canonical_expr(v) if k in expr_keys and isinstance(v, str) else _canonical(v, expr_keys))
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v, expr_keys) for v in obj]
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return float(obj)
    return obj


def _require_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass(frozen=True, eq=False)
class Scenario:
    map_spec: MapSpec
    observable: str
    perturbation: str
    horizontal: dict | None
    seed: int
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def hash(self):
        return scenario_hash(self.raw)

    def build_map(self) -> UnimodalMap:
        return build_map(self.map_spec)

    def phi(self) -> Observable:
        return Observable.parse(self.observable)

    def perturbation_for(self, m: UnimodalMap, orbit=None) -> Perturbation:
        X0 = Perturbation.parse(self.perturbation, m.a)
        if not self.horizontal:
            return X0
        if orbit is None:
            orbit = postcritical_orbit(m, HORIZONTAL_ORBIT)
        basis = [Perturbation.parse(t, m.a) for t in self.horizontal["basis"]]
        return make_horizontal(m, orbit, X0, basis, int(self.horizontal["order"]))

    def command_params(self, command, defaults, overrides=None):
        """Defaults updated by the scenario block, then by CLI overrides; unknown keys are errors."""
        block = dict(self.params.get(command) or {})
        block.update(overrides or {})
        extra = set(block) - set(defaults)
        if extra:
            raise ConfigError(f"unknown parameters for {command}: {sorted(extra)}")
        out = dict(defaults)
        for k, v in block.items():
            d = defaults[k]
            try:
                out[k] = type(d)(v) if isinstance(d, (int, float, str)) and not isinstance(d, bool) else v
            except (TypeError, ValueError):
                raise ConfigError(f"parameter {command}.{k} has the wrong type: {v!r}") from None
        return out


def scenario_hash(raw: dict) -> str:
    """SHA-256 of the canonical serialization; key order and number spelling do not matter."""
    canon = _canonical(raw, expr_keys=("observable", "perturbation", "base"))
    if isinstance(canon.get("perturbation"), dict) and canon["perturbation"].get("horizontal"):
        hz = canon["perturbation"]["horizontal"]
        hz["basis"] = [_canonical_expr(t) for t in raw["perturbation"]["horizontal"]["basis"]]
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def parse_scenario(raw) -> Scenario:
    _require_keys(raw, TOP_KEYS, "scenario")
    if "map" not in raw:
        raise ConfigError("scenario needs a 'map' block")
    mb = raw["map"]
    _require_keys(mb, MAP_KEYS, "map")
    family = mb.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"unknown map family {family!r}; expected one of {sorted(FAMILIES)}")
    params = mb.get("params") or {}
    _require_keys(params, FAMILIES[family], "map.params")
    missing = FAMILIES[family] - set(params)
    if missing:
        raise ConfigError(f"map.params missing {sorted(missing)}")
    try:
        clean = {k: ([_canonical_number(c) for c in v] if isinstance(v, list) else _canonical_number(v))
                 for k, v in params.items()}
        interval = tuple(_canonical_number(v) for v in mb.get("interval", (0.0, 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"map parameters must be numeric: {exc}") from None
    if len(interval) != 2 or not interval[0] < interval[1]:
        raise ConfigError("map.interval must be [a, b] with a < b")
    spec = MapSpec(family, clean, interval)

    observable = str(raw.get("observable", "x"))
    pb = raw.get("perturbation", {"base": "x*(1-x)"})
    if isinstance(pb, str):
        pb = {"base": pb}
    _require_keys(pb, PERTURBATION_KEYS, "perturbation")
    if "base" not in pb:
        raise ConfigError("perturbation needs a 'base' expression")
    hz = pb.get("horizontal")
    if hz is not None:
        _require_keys(hz, HORIZONTAL_KEYS, "perturbation.horizontal")
        if not isinstance(hz.get("basis"), list) or not hz["basis"]:
            raise ConfigError("perturbation.horizontal.basis must be a non-empty list")
        order = hz.get("order", 1)
        if not isinstance(order, int) or isinstance(order, bool) or not 1 <= order <= len(hz["basis"]):
            raise ConfigError("perturbation.horizontal.order must be an integer in [1, len(basis)]")
        hz = {"basis": [str(t) for t in hz["basis"]], "order": order}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    cmd_params = raw.get("params") or {}
    if not isinstance(cmd_params, dict) or not all(isinstance(v, dict) or v is None for v in cmd_params.values()):
        raise ConfigError("params must map command names to mappings")
    return Scenario(spec, observable, str(pb["base"]), hz, seed, cmd_params, raw)


def validate(scenario: Scenario) -> UnimodalMap:
    """Build the map and parse every expression; raises ``ValueError`` subclasses on failure."""
    m = scenario.build_map()
    scenario.phi()
    Perturbation.parse(scenario.perturbation, m.a)
    for t in (scenario.horizontal or {}).get("basis", []):
        Perturbation.parse(t, m.a)
    return m


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            raw = load_yaml(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if raw is None:
        raise ConfigError("config is empty")
    return parse_scenario(raw)


def header(scenario: Scenario, command: str, params: dict) -> dict:
    return {"scenario_hash": scenario.hash, "command": command, "tool_version": __version__,
            "seed": scenario.seed, "params": params}


def header_lines(head: dict):
    """Comment lines for CSV artifacts."""
    return [f"{k}: {json.dumps(head[k], sort_keys=True)}" if not isinstance(head[k], str) else f"{k}: {head[k]}"
            for k in ("scenario_hash", "command", "tool_version", "seed", "params")]
