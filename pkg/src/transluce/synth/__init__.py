"""Synthetic dataset generation."""

from .assets import Catalog, noise_roughness, random_sh, sh_envmap, value_noise
from .corpus import CorpusReport, build_corpus, read_corpus_manifest, regenerate_scene
from .formats import read_mask_png, read_pfm, tonemap, write_mask_png, write_pfm, write_preview
from .package import SCHEMA_VERSION, read_package, write_package
from .scene import (ScenePackage, SceneSpec, TrainingRecord, build_scene, draw_alter_params,
                    emit_training_tuples, sample_scene, synth_scene, validate_package)

__all__ = [
    "Catalog", "CorpusReport", "SCHEMA_VERSION", "ScenePackage", "SceneSpec", "TrainingRecord",
    "build_corpus", "build_scene", "draw_alter_params", "emit_training_tuples", "noise_roughness",
    "random_sh", "read_corpus_manifest", "read_mask_png", "read_package", "read_pfm",
    "regenerate_scene", "sample_scene", "sh_envmap", "synth_scene", "tonemap", "validate_package",
    "value_noise", "write_mask_png", "write_package", "write_pfm", "write_preview",
]
