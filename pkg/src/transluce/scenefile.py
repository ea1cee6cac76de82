"""The JSON scene file: schema, loading and saving."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import MissingFile, SchemaError
from .synth.scene import SceneSpec

SCENE_SCHEMA_ID = "transluce-scene/1"

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["$schema", "object", "env", "sss", "flash_radiance"],
    "additionalProperties": False,
    "properties": {
        "$schema": {"const": SCENE_SCHEMA_ID},
        "scene_id": {"type": "string"},
        "object": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {"properties": {"kind": {"const": "sphere"},
                                "radius": {"type": "number", "exclusiveMinimum": 0}},
                 "additionalProperties": False},
                {"properties": {"kind": {"const": "superquadric"},
                                "exponent": {"type": "number", "exclusiveMinimum": 0},
                                "axes": _VEC3,
                                "subdivisions": {"type": "integer", "minimum": 0}},
                 "required": ["exponent", "axes"], "additionalProperties": False},
                {"properties": {"kind": {"const": "mesh"}, "path": {"type": "string"}},
                 "required": ["path"], "additionalProperties": False},
            ],
        },
        "transform": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rotation": {"type": "array", "items": _VEC3, "minItems": 3, "maxItems": 3},
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "translation": _VEC3,
            },
        },
        "roughness": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {"properties": {"kind": {"const": "constant"},
                                "value": {"type": "number", "minimum": 0, "maximum": 1}},
                 "required": ["value"], "additionalProperties": False},
                {"properties": {"kind": {"const": "noise"},
                                "seed": {"type": "integer", "minimum": 0},
                                "range": _PAIR,
                                "tiling": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["seed", "range"], "additionalProperties": False},
                {"properties": {"kind": {"const": "texture"}, "path": {"type": "string"},
                                "tiling": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["path"], "additionalProperties": False},
            ],
        },
        "env": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {"properties": {"kind": {"const": "sh"},
                                "coeffs": {"type": "array", "items": {"type": "number"},
                                           "minItems": 27, "maxItems": 27},
                                "height": {"type": "integer", "minimum": 2},
                                "yaw": {"type": "number"}},
                 "required": ["coeffs"], "additionalProperties": False},
                {"properties": {"kind": {"const": "file"}, "path": {"type": "string"},
                                "yaw": {"type": "number"}},
                 "required": ["path"], "additionalProperties": False},
            ],
        },
        "sss": {
            "type": "object",
            "required": ["sigma_t", "alpha", "g"],
            "additionalProperties": False,
            "properties": {
                "sigma_t": {"type": "array", "minItems": 3, "maxItems": 3,
                            "items": {"type": "number", "minimum": 0}},
                "alpha": {"type": "array", "minItems": 3, "maxItems": 3,
                          "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                "g": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
            },
        },
        "flash_radiance": {"type": "number", "minimum": 0},
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "integer", "minimum": 0}
                           for k in ("geometry", "illumination", "render", "jitter")},
        },
        "resolution": {"type": "array", "minItems": 2, "maxItems": 2,
                       "items": {"type": "integer", "minimum": 1}},
    },
}

DEFAULT_SEEDS = {"geometry": 0, "illumination": 0, "render": 0, "jitter": 0}


def _where(err: jsonschema.ValidationError) -> str:
    path = ""
    for p in err.absolute_path:
        path += f"[{p}]" if isinstance(p, int) else (f".{p}" if path else str(p))
    return path or "<root>"


def validate_scene_dict(d: dict, source: str = "scene") -> None:
    """Raise SchemaError naming the first offending field."""
    v = jsonschema.Draft202012Validator(SCENE_SCHEMA)
    errors = sorted(v.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise SchemaError(f"{source}: {_where(e)}: {e.message}")


def scene_from_dict(d: dict, source: str = "scene") -> SceneSpec:
    validate_scene_dict(d, source)
    full = {"scene_id": Path(source).stem, "transform": {},
            "roughness": {"kind": "constant", "value": 0.05}, "resolution": [256, 256]}
    full.update({k: v for k, v in d.items() if k != "$schema"})
    full["seeds"] = {**DEFAULT_SEEDS, **d.get("seeds", {})}
    # the file format checks type invariants only; dataset ranges are a synth concern
    return SceneSpec.from_dict(full, check=False)


def load_scene(path) -> SceneSpec:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"scene file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{p}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(d, dict):
        raise SchemaError(f"{p}: <root>: expected an object")
    return scene_from_dict(d, str(p))


def scene_to_dict(spec: SceneSpec) -> dict:
    d = {"$schema": SCENE_SCHEMA_ID}
    d.update(spec.to_dict())
    return d


def save_scene(spec: SceneSpec, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(spec), indent=2, sort_keys=True) + "\n")
