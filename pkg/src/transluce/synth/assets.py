"""Procedural assets and user-supplied asset catalogs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..shlight import EnvMap, envmap_from_sh
from .formats import read_pfm, read_png


def value_noise(size: int, cells: int, octaves: int, rng: np.random.Generator) -> np.ndarray:
    """Periodic multi-octave value noise in [0, 1] on a size x size grid.

    Lattice values are blended with a smoothstep, and every octave wraps at
    the border so textures tile without seams.
    """
    out = np.zeros((size, size))
    total = 0.0
    amp = 1.0
    for o in range(octaves):
        n = cells * 2 ** o
        lattice = rng.random((n, n))
        t = np.arange(size) * n / size
        i0 = np.floor(t).astype(int)
        f = t - i0
        f = f * f * (3 - 2 * f)
        i1 = (i0 + 1) % n
        i0 %= n
        rows = lattice[i0] * (1 - f)[:, None] + lattice[i1] * f[:, None]
        layer = rows[:, i0] * (1 - f)[None, :] + rows[:, i1] * f[None, :]
        out += amp * layer
        total += amp
        amp *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.full_like(out, 0.5)


def noise_roughness(seed: int, lo: float, hi: float, size: int = 128, cells: int = 4,
                    octaves: int = 4) -> np.ndarray:
    n = value_noise(size, cells, octaves, np.random.default_rng(seed))
    return lo + (hi - lo) * n


def load_roughness_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        a = np.asarray(read_pfm(path).data, dtype=np.float64)
    else:
        a = read_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    return np.clip(a, 1e-3, 1.0)


def random_sh(rng: np.random.Generator) -> np.ndarray:
    """3x9 radiance coefficients for a plausible indoor-like light field:
    a tinted ambient term plus weaker directional bands."""
    base = rng.uniform(1.0, 2.5)
    tint = rng.uniform(0.8, 1.2, size=3)
    sh = np.zeros((3, 9))
    sh[:, 0] = base * tint
    d1 = rng.normal(size=3)
    d1 *= rng.uniform(0.2, 0.6) * base / np.linalg.norm(d1)
    sh[:, 1:4] = d1[None, :] * tint[:, None]
    sh[:, 4:9] = rng.uniform(-0.15, 0.15, size=(3, 5)) * base
    return sh


def sh_envmap(coeffs, height: int = 32, yaw: float = 0.0) -> EnvMap:
    env = envmap_from_sh(np.asarray(coeffs).reshape(3, 9), height=height)
    return EnvMap(env.image, yaw=yaw)


def load_envmap(path, yaw: float = 0.0) -> EnvMap:
    return EnvMap(read_pfm(path), yaw=yaw)


@dataclass(frozen=True)
class Catalog:
    """External assets. With ``procedural`` set, built-in shapes, noise
    textures and SH environments join the pools."""

    meshes: tuple = ()
    roughness_maps: tuple = ()
    envmaps: tuple = ()
    procedural: bool = True

    @classmethod
    def from_dirs(cls, meshes=None, roughness=None, envmaps=None, procedural=True) -> "Catalog":
        def scan(d, exts):
            if d is None:
                return ()
            return tuple(sorted(str(p) for p in Path(d).iterdir() if p.suffix.lower() in exts))
        return cls(scan(meshes, {".obj", ".stl"}), scan(roughness, {".pfm", ".png"}),
                   scan(envmaps, {".pfm"}), procedural)

    @property
    def empty(self) -> bool:
        return not (self.meshes or self.roughness_maps or self.envmaps or self.procedural)
