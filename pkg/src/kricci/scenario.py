"""Scenario configuration: JSON schema, defaults and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema

from .errors import BadCodimension, RegistryMiss, SchemaError
from .geometry import MetricChart, make_chart
from .ode import PROFILE_KINDS, AsymptoticProfile, profile_from_spec
from .submanifold import DENSITY_KINDS, IMMERSIONS

_num = {"type": "number"}
_int = {"type": "integer"}
_params = {"type": "object"}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "kricci scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "chart", "immersion"],
    "properties": {
        "name": {"type": "string"},
        "mode": {"enum": ["theorem1", "theorem2"]},
        "chart": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id"],
            "properties": {
                "id": {"type": "string"},
                "params": _params,
                "hypothesis": {"enum": ["ric_k_nonneg", "asymptotic"]},
                "base_point": {"type": "array", "items": _num},
            },
        },
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(PROFILE_KINDS)},
                "lambda0": {"type": "number", "minimum": 0},
                "p": _num,
            },
        },
        "immersion": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id"],
            "properties": {
                "id": {"type": "string"},
                "params": _params,
                "refinement": {"type": "integer", "minimum": 0, "maximum": 7},
            },
        },
        "density": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"type": "string"},
                "params": _params,
            },
        },
        "rays": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "horizon": {"type": "number", "minimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "avr": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "n_dirs": _int,
                "steps": {"type": "integer", "minimum": 4},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "lemma": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "normal_samples": {"type": "integer", "minimum": 1},
                "constant": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "curvature_audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_points": {"type": "integer", "minimum": 1},
                "n_frames": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ineq": {"type": "number", "minimum": 0},
                "curvature": {"type": "number", "minimum": 0},
                "conservation": {"type": "number", "minimum": 0},
            },
        },
        "distance": {"enum": ["surrogate", "exact"]},
    },
}

DEFAULTS = {
    "mode": "theorem1",
    "chart": {"params": {}, "hypothesis": "ric_k_nonneg"},
    "profile": {"kind": "zero", "lambda0": 0.0, "p": 3.0},
    "immersion": {"params": {}, "refinement": 4},
    "density": {"kind": "constant", "params": {}},
    "rays": {"count": 12, "horizon": 3.0, "step": 0.01, "seed": 0},
    "avr": {"radius": 10.0, "n_dirs": 500, "steps": 200, "seed": 0},
    "lemma": {"normal_samples": 16, "constant": 1.0},
    "curvature_audit": {"n_points": 20, "n_frames": 8, "seed": 0},
    "tolerances": {"ineq": 0.03, "curvature": 1e-6, "conservation": 1e-8},
    "distance": "surrogate",
}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    config: dict
    chart: MetricChart
    profile: AsymptoticProfile
    n: int
    m: int

    @property
    def k(self) -> int:
        return min(self.n - 1, self.m - 1)

    @property
    def name(self) -> str:
        return self.config["name"]

    @property
    def mode(self) -> str:
        return self.config["mode"]

    @property
    def base_point(self):
        bp = self.config["chart"].get("base_point")
        return [0.0] * self.chart.dim if bp is None else list(bp)

    def section(self, key) -> dict:
        return self.config[key]

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: int | None = None, refine: int | None = None,
                       require_codim: bool = True) -> "Scenario":
        cfg = copy.deepcopy(self.config)
        if seed is not None:
            for sec in ("rays", "avr", "curvature_audit"):
                cfg[sec]["seed"] = int(seed)
        if refine is not None:
            cfg["immersion"]["refinement"] = int(refine)
        return scenario_from_dict(cfg, require_codim)


def _path(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def scenario_from_dict(raw: dict, require_codim: bool = True) -> Scenario:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(e.message, _path(e))
    cfg = _merge(DEFAULTS, raw)
    # registry ids are checked here rather than in the schema
    if cfg["immersion"]["id"] not in IMMERSIONS:
        raise RegistryMiss(f"unknown immersion {cfg['immersion']['id']!r}; known: {sorted(IMMERSIONS)}")
    if cfg["density"]["kind"] not in DENSITY_KINDS:
        raise RegistryMiss(f"unknown density kind {cfg['density']['kind']!r}; known: {list(DENSITY_KINDS)}")
    chart = make_chart(cfg["chart"]["id"], cfg["chart"]["params"])
    bp = cfg["chart"].get("base_point")
    if bp is not None and len(bp) != chart.dim:
        raise SchemaError(f"expected {chart.dim} coordinates", "/chart/base_point")
    profile = profile_from_spec(cfg["profile"])  # b0 precheck
    n = 2
    m = chart.dim - n
    if require_codim and m < 2:
        raise BadCodimension(f"codimension m = {m}: the inequalities require m >= 2")
    if cfg["avr"]["n_dirs"] < 1:
        raise SchemaError("must be positive", "/avr/n_dirs")
    return Scenario(cfg, chart, profile, n, m)


def parse_config(text: str, require_codim: bool = True) -> Scenario:
    """Parse a JSON scenario document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "/") from exc
    if not isinstance(raw, dict):
        raise SchemaError("top level must be an object", "/")
    return scenario_from_dict(raw, require_codim)


def load_config(path, require_codim: bool = True) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), require_codim)
