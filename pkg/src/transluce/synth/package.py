"""On-disk scene packages: PFM rasters, a PNG mask and a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from ..core import GBuffer, SssParams
from ..errors import ChecksumMismatch, MissingFile, SchemaError, SchemaVersionMismatch
from .formats import crc32_file, read_mask_png, read_pfm, write_mask_png, write_pfm
from .scene import ScenePackage, SceneSpec

SCHEMA_VERSION = "1"

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "scene_id", "spec", "render", "sh_gt", "alter_params",
                 "files"],
    "properties": {
        "schema_version": {"type": "string"},
        "scene_id": {"type": "string"},
        "spec": {"type": "object"},
        "render": {"type": "object"},
        "sh_gt": {"type": "array", "minItems": 3, "maxItems": 3,
                  "items": {"type": "array", "minItems": 9, "maxItems": 9,
                            "items": {"type": "number"}}},
        "alter_params": {"type": "array", "items": {"type": "object"}},
        "files": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["path", "crc32"],
            "properties": {"path": {"type": "string"}, "crc32": {"type": "string"}}}},
    },
}

RASTERS = ("flash", "noflash", "alter0", "alter1", "alter2", "depth", "normal", "rough")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_package(pkg: ScenePackage, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rasters = dict(pkg.images)
    rasters.update(depth=pkg.gt.depth, normal=pkg.gt.normal, rough=pkg.gt.roughness)
    files = {}
    for name, im in rasters.items():
        fname = f"{name}.pfm"
        write_pfm(d / fname, im)
        files[name] = {"path": fname, "crc32": crc32_file(d / fname)}
    write_mask_png(d / "mask.png", pkg.gt.mask)
    files["mask"] = {"path": "mask.png", "crc32": crc32_file(d / "mask.png")}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": pkg.spec.scene_id,
        "spec": pkg.spec.to_dict(),
        "render": pkg.render,
        "sh_gt": np.asarray(pkg.sh_gt).tolist(),
        "alter_params": [a.to_dict() for a in pkg.alter_params],
        "files": files,
    }
    dump_json(manifest, d / "manifest.json")
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise MissingFile(str(path))
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: line {e.lineno}: {e.msg}") from e
    version = m.get("schema_version") if isinstance(m, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {version!r}, "
                                    f"expected {SCHEMA_VERSION!r}")
    try:
        jsonschema.validate(m, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as e:
        field = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaError(f"{path}: {field}: {e.message}") from e
    return m


def read_package(directory, verify: bool = True) -> ScenePackage:
    d = Path(directory)
    m = read_manifest(d)
    files = m["files"]
    for name in RASTERS + ("mask",):
        if name not in files:
            raise SchemaError(f"manifest lists no {name!r} file")
        p = d / files[name]["path"]
        if not p.exists():
            raise MissingFile(str(p))
        if verify and crc32_file(p) != files[name]["crc32"]:
            raise ChecksumMismatch(f"{p}: CRC32 differs from the manifest")
    im = {name: read_pfm(d / files[name]["path"]) for name in RASTERS}
    gt = GBuffer(im["depth"], im["normal"], im["rough"], read_mask_png(d / files["mask"]["path"]))
    return ScenePackage(
        spec=SceneSpec.from_dict(m["spec"]),
        flash=im["flash"], noflash=im["noflash"],
        altered=(im["alter0"], im["alter1"], im["alter2"]),
        gt=gt,
        sh_gt=np.array(m["sh_gt"], dtype=np.float64),
        alter_params=tuple(SssParams.from_dict(a) for a in m["alter_params"]),
        render=m["render"],
    )
