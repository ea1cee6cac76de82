"""Scene sampling and five-image scene synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core import Camera, GBuffer, Illumination, Image, ParamRanges, SssParams
from ..direct import render_direct
from ..errors import EmptyCatalog, OutOfRange, SceneError
from ..shlight import EnvMap, project_envmap
from ..volume.geometry import Sphere, load_mesh, superquadric
from ..volume.tracer import (RoughnessTexture, Scene, TraceConfig, raycast_gbuffer,
                             trace)
from .assets import (Catalog, load_envmap, load_roughness_map, noise_roughness,
                     random_sh, sh_envmap)

DATASET = ParamRanges()
CUBE = 0.5
N_ALTERED = 3
JITTER_DEG = 0.5


def _in_range(name, values, lo, hi):
    for v in np.atleast_1d(values):
        if not lo <= v <= hi:
            raise OutOfRange(name, float(v), lo, hi)


def check_dataset_sss(sss: SssParams, ranges: ParamRanges = DATASET) -> None:
    _in_range("sigma_t", sss.sigma_t, *ranges.sigma_t)
    _in_range("alpha", sss.alpha, *ranges.alpha)
    _in_range("g", sss.g, *ranges.g)


def sample_sss(rng: np.random.Generator, ranges: ParamRanges = DATASET) -> SssParams:
    return SssParams(tuple(rng.uniform(*ranges.sigma_t, size=3)),
                     tuple(rng.uniform(*ranges.alpha, size=3)),
                     float(rng.uniform(*ranges.g)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to rebuild one scene exactly.

    ``object``, ``roughness`` and ``env`` are small JSON-ready dicts tagged by
    ``kind``; see docs/scene-format.md for the accepted variants.
    """

    scene_id: str
    object: dict
    transform: dict
    roughness: dict
    env: dict
    sss: SssParams
    flash_radiance: float
    seeds: dict
    resolution: tuple = (256, 256)
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(x) for x in self.resolution))
        object.__setattr__(self, "flash_radiance", float(self.flash_radiance))
        if not self.check:
            return
        check_dataset_sss(self.sss)
        _in_range("flash_radiance", self.flash_radiance, *DATASET.flash_intensity)
        for key in ("geometry", "illumination", "render", "jitter"):
            if key not in self.seeds:
                raise ValueError(f"missing seed {key!r}")

    @property
    def camera(self) -> Camera:
        return Camera(resolution=self.resolution)

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "object": self.object, "transform": self.transform,
                "roughness": self.roughness, "env": self.env, "sss": self.sss.to_dict(),
                "flash_radiance": self.flash_radiance, "seeds": dict(self.seeds),
                "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, d: dict, check: bool = True) -> "SceneSpec":
        return cls(d["scene_id"], d["object"], d["transform"], d["roughness"], d["env"],
                   SssParams.from_dict(d["sss"]), d["flash_radiance"], d["seeds"],
                   tuple(d.get("resolution", (256, 256))), check=check)

    def with_sss(self, sss: SssParams) -> "SceneSpec":
        return replace(self, sss=sss)


def sample_scene(rng: np.random.Generator, catalog: Catalog = Catalog(),
                 resolution=(256, 256), scene_id: str = "scene") -> SceneSpec:
    """Draw a random scene. Every draw happens in a fixed order, so one
    generator state always yields the same spec."""
    if catalog.empty:
        raise EmptyCatalog("no assets configured and procedural fallback disabled")
    if not (catalog.meshes or catalog.procedural):
        raise EmptyCatalog("no object assets")
    if not (catalog.envmaps or catalog.procedural):
        raise EmptyCatalog("no environment maps")
    seeds = {k: int(s) for k, s in
             zip(("geometry", "illumination", "render", "jitter"),
                 rng.integers(0, 2 ** 32, size=4))}

    geo = np.random.default_rng(seeds["geometry"])
    shapes = ["sphere", "superquadric"] if catalog.procedural else []
    pool = shapes + list(catalog.meshes)
    pick = pool[int(geo.integers(len(pool)))]
    if pick == "sphere":
        obj = {"kind": "sphere"}
    elif pick == "superquadric":
        obj = {"kind": "superquadric", "exponent": float(geo.uniform(1.5, 4.0)),
               "axes": [float(a) for a in geo.uniform(0.6, 1.0, size=3)], "subdivisions": 3}
    else:
        obj = {"kind": "mesh", "path": pick}
    transform = {"rotation": random_rotation(geo).tolist(),
                 "scale": float(geo.uniform(0.7, 1.0)),
                 "translation": [float(t) for t in geo.uniform(-0.05, 0.05, size=3)]}

    tex_pool = (["noise"] if catalog.procedural else []) + list(catalog.roughness_maps)
    tiling = int(geo.integers(1, 5))
    if not tex_pool:
        rough = {"kind": "constant", "value": float(geo.uniform(0.05, 0.9))}
    else:
        tex = tex_pool[int(geo.integers(len(tex_pool)))]
        if tex == "noise":
            lo = float(geo.uniform(0.02, 0.5))
            rough = {"kind": "noise", "seed": int(geo.integers(2 ** 32)), "range": [lo, float(
                geo.uniform(lo + 0.05, 1.0))], "tiling": tiling}
        else:
            rough = {"kind": "texture", "path": tex, "tiling": tiling}

    ill = np.random.default_rng(seeds["illumination"])
    env_pool = (["sh"] if catalog.procedural else []) + list(catalog.envmaps)
    pick = env_pool[int(ill.integers(len(env_pool)))]
    if pick == "sh":
        env = {"kind": "sh", "coeffs": random_sh(ill).ravel().tolist(), "height": 32}
    else:
        env = {"kind": "file", "path": pick}
    env["yaw"] = float(ill.uniform(0.0, 2 * math.pi))

    sss = sample_sss(rng)
    flash = float(rng.uniform(*DATASET.flash_intensity))
    return SceneSpec(scene_id, obj, transform, rough, env, sss, flash, seeds, resolution)


# --- building renderer inputs from a spec ------------------------------------------------

def _resolve(path, base_dir):
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def build_geometry(spec: SceneSpec, base_dir=None):
    o, t = spec.object, spec.transform
    rot = np.asarray(t.get("rotation", np.eye(3)), dtype=np.float64)
    scale = float(t.get("scale", 1.0))
    trans = tuple(t.get("translation", (0.0, 0.0, 0.0)))
    kind = o["kind"]
    if kind == "sphere":
        base = Sphere((0.0, 0.0, 0.0), o.get("radius", CUBE / 2))
    elif kind == "superquadric":
        base = superquadric(o["exponent"], o["axes"], o.get("subdivisions", 3))
        base = base.normalized_to_cube(CUBE)
    elif kind == "mesh":
        base = load_mesh(_resolve(o["path"], base_dir)).normalized_to_cube(CUBE)
    else:
        raise ValueError(f"unknown object kind {kind!r}")
    return base.transformed(rot, scale, trans)


def build_roughness(spec: SceneSpec, base_dir=None):
    r, t = spec.roughness, spec.transform
    if r["kind"] == "constant":
        return float(r["value"])
    if r["kind"] == "noise":
        img = noise_roughness(r["seed"], *r["range"])
    elif r["kind"] == "texture":
        img = load_roughness_map(_resolve(r["path"], base_dir))
    else:
        raise ValueError(f"unknown roughness kind {r['kind']!r}")
    return RoughnessTexture(img, tuple(t.get("translation", (0, 0, 0))),
                            np.asarray(t.get("rotation", np.eye(3))), float(r.get("tiling", 1)))


def build_env(spec: SceneSpec, base_dir=None) -> EnvMap:
    e = spec.env
    if e["kind"] == "sh":
        return sh_envmap(e["coeffs"], e.get("height", 32), e.get("yaw", 0.0))
    if e["kind"] == "file":
        return load_envmap(_resolve(e["path"], base_dir), e.get("yaw", 0.0))
    raise ValueError(f"unknown env kind {e['kind']!r}")


def build_scene(spec: SceneSpec, base_dir=None) -> Scene:
    return Scene(build_geometry(spec, base_dir), build_roughness(spec, base_dir), spec.sss,
                 build_env(spec, base_dir), spec.flash_radiance, spec.camera, JITTER_DEG,
                 spec.seeds["jitter"])


# --- packages --------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenePackage:
    spec: SceneSpec
    flash: Image
    noflash: Image
    altered: tuple
    gt: GBuffer
    sh_gt: np.ndarray
    alter_params: tuple
    render: dict

    @property
    def images(self) -> dict:
        out = {"flash": self.flash, "noflash": self.noflash}
        out.update({f"alter{k}": im for k, im in enumerate(self.altered)})
        return out

    def equals(self, other: "ScenePackage") -> bool:
        gt_a = (self.gt.depth, self.gt.normal, self.gt.roughness, self.gt.mask)
        gt_b = (other.gt.depth, other.gt.normal, other.gt.roughness, other.gt.mask)
        return (self.spec == other.spec and self.render == other.render
                and self.alter_params == other.alter_params
                and np.array_equal(self.sh_gt, other.sh_gt)
                and self.images.keys() == other.images.keys()
                and all(a.equals(other.images[k]) for k, a in self.images.items())
                and all(a.equals(b) for a, b in zip(gt_a, gt_b)))


def render_seed(base: int, k: int) -> int:
    return int(np.random.SeedSequence([int(base), k]).generate_state(1, dtype=np.uint64)[0])


def draw_alter_params(spec: SceneSpec, n: int = N_ALTERED) -> tuple:
    rng = np.random.default_rng([spec.seeds["render"], 7919])
    out = []
    while len(out) < n:
        s = sample_sss(rng)
        if s != spec.sss:
            out.append(s)
    return tuple(out)


def _f32(im: Image) -> Image:
    return Image(np.asarray(im.data, dtype=np.float32))


def synth_scene(spec: SceneSpec, cfg: TraceConfig = TraceConfig(), *, sh_samples: int = 1 << 18,
                alter_params=None, base_dir=None) -> ScenePackage:
    """Flash, no-flash and three altered renders plus ground-truth buffers.

    Altered images keep the flash camera and everything else of the flash
    shot; only the medium changes. Each render gets its own seed derived
    from the spec's render seed. Rasters are stored as float32.
    """
    try:
        scene = build_scene(spec, base_dir)
        alter = tuple(alter_params) if alter_params is not None else draw_alter_params(spec)
        seeds = [render_seed(spec.seeds["render"], k) for k in range(2 + len(alter))]
        cam = spec.camera
        flash = trace(scene.geometry, scene.roughness, spec.sss, scene.env, scene.flash(), cam,
                      replace(cfg, seed=seeds[0]))
        noflash = trace(scene.geometry, scene.roughness, spec.sss, scene.env, None,
                        scene.noflash_camera(), replace(cfg, seed=seeds[1]))
        altered = tuple(
            _f32(trace(scene.geometry, scene.roughness, a, scene.env, scene.flash(), cam,
                       replace(cfg, seed=seeds[2 + k])))
            for k, a in enumerate(alter))
        g = raycast_gbuffer(scene.geometry, scene.roughness, cam, cfg.threads)
        gt = GBuffer(_f32(g.depth), _f32(g.normal), _f32(g.roughness), _f32(g.mask))
        sh = project_envmap(scene.env, sh_samples, seed=spec.seeds["illumination"],
                            threads=cfg.threads)
    except (ValueError, RuntimeError, OSError) as e:
        raise SceneError(spec.scene_id, e) from e
    render = {"spp": cfg.spp, "max_bounces": cfg.max_bounces, "rr_start": cfg.rr_start,
              "pixel_jitter": cfg.pixel_jitter, "sh_samples": int(sh_samples)}
    return ScenePackage(spec, _f32(flash), _f32(noflash), altered, gt, sh, alter, render)


def trace_config_of(render: dict, threads=None) -> TraceConfig:
    return TraceConfig(spp=render["spp"], max_bounces=render["max_bounces"],
                       rr_start=render["rr_start"], pixel_jitter=render["pixel_jitter"],
                       threads=threads)


def validate_package(pkg: ScenePackage) -> list:
    """Problems found in a package; an empty list means it is valid."""
    bad = []
    ims = pkg.images
    if len(ims) != 2 + N_ALTERED or len(pkg.altered) != N_ALTERED:
        bad.append(f"expected {2 + N_ALTERED} images, found {len(ims)}")
    if len(pkg.alter_params) != N_ALTERED:
        bad.append(f"expected {N_ALTERED} alter params, found {len(pkg.alter_params)}")
    shapes = {im.shape[:2] for im in ims.values()} | {(pkg.gt.height, pkg.gt.width)}
    if len(shapes) != 1:
        bad.append(f"resolution mismatch {sorted(shapes)}")
    if shapes and (pkg.spec.resolution[1], pkg.spec.resolution[0]) not in shapes:
        bad.append("images do not match the spec resolution")
    for name, s in [("sss", pkg.spec.sss)] + [(f"alter{k}", a)
                                               for k, a in enumerate(pkg.alter_params)]:
        try:
            check_dataset_sss(s)
        except OutOfRange as e:
            bad.append(f"{name}: {e}")
    if any(a == pkg.spec.sss for a in pkg.alter_params):
        bad.append("an alter param equals the scene medium")
    if not DATASET.flash_intensity[0] <= pkg.spec.flash_radiance <= DATASET.flash_intensity[1]:
        bad.append("flash radiance out of range")
    m = pkg.gt.mask_bool
    n = np.asarray(pkg.gt.normal.data, dtype=np.float64)[m]
    if n.size and np.max(np.abs(np.linalg.norm(n, axis=-1) - 1)) > 1e-4:
        bad.append("normals not unit length on the mask")
    if np.any(pkg.gt.depth.data[..., 0][m] <= 0):
        bad.append("non-positive depth on the mask")
    r = pkg.gt.roughness.data
    if np.any(r <= 0) or np.any(r > 1):
        bad.append("roughness outside (0, 1]")
    if np.asarray(pkg.sh_gt).shape != (3, 9) or not np.all(np.isfinite(pkg.sh_gt)):
        bad.append("sh_gt is not a finite 3x9 block")
    for k, im in ims.items():
        if np.any(im.data < 0):
            bad.append(f"{k} has negative radiance")
    return bad


# --- neural-renderer training tuples ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrainingRecord:
    kind: str
    direct: Image         # I_d from the direct renderer on GT buffers
    sh: np.ndarray
    flash_intensity: float
    sss: SssParams
    background: Image     # flash image with the object masked out
    target: Image


def masked_background(flash: Image, mask: Image) -> Image:
    a = np.array(flash.data)
    a[mask.data[..., 0] > 0.5] = 0
    return Image(a)


def emit_training_tuples(pkg: ScenePackage, camera: Camera | None = None) -> list:
    """One record for the flash shot and one per altered shot."""
    cam = camera or pkg.spec.camera
    illum = Illumination(pkg.sh_gt, pkg.spec.flash_radiance)
    direct = render_direct(pkg.gt, illum, cam)
    bg = masked_background(pkg.flash, pkg.gt.mask)
    recs = [TrainingRecord("flash", direct, pkg.sh_gt, pkg.spec.flash_radiance, pkg.spec.sss,
                           bg, pkg.flash)]
    for k, (a, im) in enumerate(zip(pkg.alter_params, pkg.altered)):
        recs.append(TrainingRecord(f"alter{k}", direct, pkg.sh_gt, pkg.spec.flash_radiance, a,
                                   bg, im))
    return recs


def save_training_tuples(records, path) -> None:
    arrays = {}
    for r in records:
        arrays[f"{r.kind}/direct"] = r.direct.data
        arrays[f"{r.kind}/background"] = r.background.data
        arrays[f"{r.kind}/target"] = r.target.data
        arrays[f"{r.kind}/sh"] = r.sh
        arrays[f"{r.kind}/i"] = np.array(r.flash_intensity)
        arrays[f"{r.kind}/sss"] = r.sss.as_array()
    np.savez(path, **arrays)
