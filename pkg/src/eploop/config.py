"""Run-configuration schema, defaults and ``--set`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

_number = {"type": "number"}
_point = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}
_complex = {"oneOf": [_number, {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "family": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"type": "string"},
                "file": {"type": "string"},
                "params": {"type": "object"},
            },
            "oneOf": [{"required": ["builtin"]}, {"required": ["file"]}],
        },
        "loop": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["relative", "absolute", "polygon"]},
                "center": _point,
                "delta": {"type": "number", "minimum": 0},
                "shift": _number,
                "n_steps": {"type": "integer", "minimum": 8},
                "traversal_time": {"type": "number", "exclusiveMinimum": 0},
                "direction": {"enum": [1, -1]},
                "turns": {"type": "integer", "minimum": 1},
                "vertices": {"type": "array", "items": _point},
            },
        },
        "tracked": {"oneOf": [{"type": "null"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
        "initial": {
            "type": "array",
            "items": {
                "oneOf": [
                    {"type": "integer", "minimum": 0},
                    {"enum": ["cycle", "all"]},
                    {"type": "array", "items": _complex},
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["random"],
                        "properties": {
                            "random": {"type": "integer", "minimum": 1},
                            "seed": {"type": "integer"},
                        },
                    },
                ]
            },
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "adiabatic": {"type": "boolean"},
                "oracle": {"type": "boolean"},
            },
        },
        "spectral": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gap_tol": {"type": "number", "exclusiveMinimum": 0},
                "overlap_tol": {"type": "number", "exclusiveMinimum": 0},
                "refinement_limit": {"type": "integer", "minimum": 0},
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s_min": _number,
                "s_max": _number,
                "n_s": {"type": "integer", "minimum": 2},
                "surface": {"type": "boolean"},
            },
        },
        "detect": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rectangle"],
            "properties": {
                "rectangle": {"type": "array", "items": _point, "minItems": 2, "maxItems": 2},
                "max_order": {"type": "integer", "minimum": 2},
                "rel_diameter": {"type": "number", "exclusiveMinimum": 0},
                "n_steps": {"type": "integer", "minimum": 8},
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coupling_points": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "ep": {"type": "array", "items": _point},
        "output": {"type": "string"},
        "plots": {"type": "boolean"},
    },
}

DEFAULTS = {
    "name": "run",
    "loop": {
        "mode": "absolute",
        "center": [0.0, 0.0],
        "delta": 0.1,
        "shift": 0.0,
        "n_steps": 256,
        "traversal_time": 50.0,
        "direction": 1,
        "turns": 1,
        "vertices": [],
    },
    "tracked": None,
    "initial": ["all"],
    "dynamics": {"rtol": 1e-10, "atol": 1e-14, "adiabatic": True, "oracle": False},
    "spectral": {"gap_tol": 1e-12, "overlap_tol": 0.1, "refinement_limit": 12},
    "scan": {"s_min": 0.0, "s_max": 2.0, "n_s": 41, "surface": True},
    "validate": {"coupling_points": 50, "seed": 20160301, "fd_step": 1e-6},
    "output": "out",
    "plots": True,
}


CONFIG_DIR = Path(__file__).resolve().parent / "configs"


class ConfigError(ValueError):
    pass


def shipped_configs() -> list[str]:
    """Names of the experiment configs bundled with the package."""
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def shipped_config_path(name: str) -> Path:
    path = CONFIG_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"no shipped config {name!r}; known: {shipped_configs()}")
    return path


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    scan = doc.get("scan", {})
    if "s_min" in scan and "s_max" in scan and scan["s_min"] >= scan["s_max"]:
        raise ConfigError("scan: s_min must be below s_max")


def resolve(doc: dict) -> dict:
    """Validate and fill every default explicitly."""
    validate(doc)
    full = _merge(DEFAULTS, doc)
    validate(full)
    return full


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {item!r}: {part!r} is not an object")
        node[path[-1]] = value
    return doc


def load_config(path, overrides=()) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return resolve(apply_overrides(doc, overrides))


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()
