"""Multi-scene corpora with per-scene seeds for exact regeneration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import MissingFile, SceneError, SchemaVersionMismatch
from ..volume.tracer import TraceConfig
from .assets import Catalog
from .package import SCHEMA_VERSION, dump_json, read_package, write_package
from .scene import sample_scene, synth_scene, trace_config_of, validate_package

SPLITS = {"train": 0, "test": 1}


def scene_key(seed: int, split: str, index: int) -> list:
    """Entropy for one scene. Splits live in disjoint seed partitions."""
    return [int(seed), SPLITS[split], int(index)]


def scene_id(split: str, index: int) -> str:
    return f"{split}-{index:05d}"


def spec_for(seed: int, split: str, index: int, catalog: Catalog = Catalog(),
             resolution=(256, 256)):
    rng = np.random.default_rng(np.random.SeedSequence(scene_key(seed, split, index)))
    return sample_scene(rng, catalog, resolution, scene_id(split, index))


@dataclass
class CorpusReport:
    manifest: Path
    ok: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failed


def build_corpus(n_scenes: int, out_dir, seed: int = 0, cfg: TraceConfig = TraceConfig(),
                 resolution=(256, 256), split: str = "train", catalog: Catalog = Catalog(),
                 sh_samples: int = 1 << 18, validate: bool = False,
                 progress: Callable[[str, str], None] | None = None) -> CorpusReport:
    """Render ``n_scenes`` packages under ``out_dir``.

    A failing scene is recorded and skipped; the others are kept.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {sorted(SPLITS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = CorpusReport(out / "corpus.json")
    entries = []
    for i in range(n_scenes):
        sid = scene_id(split, i)
        try:
            spec = spec_for(seed, split, i, catalog, resolution)
            pkg = synth_scene(spec, cfg, sh_samples=sh_samples)
            write_package(pkg, out / sid)
            if validate:
                problems = validate_package(read_package(out / sid))
                if problems:
                    raise SceneError(sid, "; ".join(problems))
        except Exception as e:  # noqa: BLE001 - partial-failure report
            report.failed[sid] = str(e)
            if progress:
                progress(sid, f"failed: {e}")
            continue
        report.ok.append(sid)
        entries.append({"id": sid, "index": i, "seed_key": scene_key(seed, split, i),
                        "path": sid})
        if progress:
            progress(sid, "ok")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(seed),
        "split": split,
        "n_scenes": n_scenes,
        "resolution": list(resolution),
        "render": {"spp": cfg.spp, "max_bounces": cfg.max_bounces, "rr_start": cfg.rr_start,
                   "pixel_jitter": cfg.pixel_jitter, "sh_samples": int(sh_samples)},
        "catalog": {"meshes": list(catalog.meshes), "roughness_maps": list(catalog.roughness_maps),
                    "envmaps": list(catalog.envmaps), "procedural": catalog.procedural},
        "scenes": entries,
        "failed": [{"id": k, "error": v} for k, v in report.failed.items()],
    }
    dump_json(manifest, report.manifest)
    return report


def read_corpus_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / "corpus.json"
    if not path.exists():
        raise MissingFile(str(path))
    m = json.loads(path.read_text())
    if m.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {m.get('schema_version')!r}")
    return m


def regenerate_scene(corpus_dir, sid: str, threads=None):
    """Rebuild one package from the corpus manifest alone."""
    m = read_corpus_manifest(corpus_dir)
    entry = next((e for e in m["scenes"] + m["failed"] if e["id"] == sid), None)
    if entry is None:
        raise KeyError(f"scene {sid!r} not in the corpus")
    cat = m["catalog"]
    catalog = Catalog(tuple(cat["meshes"]), tuple(cat["roughness_maps"]), tuple(cat["envmaps"]),
                      cat["procedural"])
    spec = spec_for(m["seed"], m["split"], int(sid.split("-")[-1]), catalog,
                    tuple(m["resolution"]))
    return synth_scene(spec, trace_config_of(m["render"], threads),
                       sh_samples=m["render"]["sh_samples"])
