"""Monte Carlo volumetric path tracer: rough dielectric boundary around a
homogeneous scattering medium, lit by an environment and the flash."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple, Union

import numpy as np

from .._parallel import run_tasks, tiles
from ..core import (FLASH_OFFSET, FLASH_RADIUS, IOR, Camera, GBuffer, Image, SssParams,
                    Spectrum)
from ..errors import ZeroExtinction
from ..shlight import EnvMap
from . import kernels as K
from .geometry import Sphere, TriangleMesh, build_bvh, require_watertight

Geometry = Union[Sphere, TriangleMesh]


@dataclass(frozen=True)
class TraceConfig:
    spp: int = 64
    max_bounces: int = 64
    seed: int = 0
    rr_start: int = 8
    threads: int | None = None
    tile: int = 16
    pixel_jitter: bool = True
    # test and reference hooks
    single_scatter: bool = False
    volume_events: bool = True
    uniform_phase: bool = False
    nee: bool = True
    window: tuple | None = None  # (x0, y0, x1, y1) in pixels

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be >= 1")


@dataclass(frozen=True)
class FlashLight:
    center: tuple
    radius: float = FLASH_RADIUS
    radiance: float = 50.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("flash radius must be positive")
        if self.radiance < 0:
            raise ValueError("flash radiance must be non-negative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def for_camera(cls, camera: Camera, radiance: float) -> "FlashLight":
        return cls(tuple(camera.flash_center(FLASH_OFFSET)), FLASH_RADIUS, radiance)


@dataclass(frozen=True, eq=False)
class RoughnessTexture:
    """Roughness painted on the object by spherical projection about
    ``center`` in the object's frame, repeated ``tiling`` times."""

    image: np.ndarray
    center: tuple = (0.0, 0.0, 0.0)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    tiling: float = 1.0

    def __post_init__(self):
        img = np.ascontiguousarray(self.image, dtype=np.float64)
        if img.ndim == 3:
            img = img[..., 0]
        if img.ndim != 2 or img.size == 0:
            raise ValueError("roughness texture must be a non-empty 2D raster")
        if np.any(img <= 0) or np.any(img > 1):
            raise ValueError("roughness values must lie in (0, 1]")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    def packed(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.center, dtype=np.float64),
                               self.rotation.ravel(), [float(self.tiling)]])


Roughness = Union[float, RoughnessTexture]


class TraceResult(NamedTuple):
    env: np.ndarray       # radiance carried by environment light
    flash: np.ndarray     # radiance carried by the flash
    second_moment: np.ndarray
    spp: int

    @property
    def image(self) -> Image:
        return Image(self.env + self.flash)

    @property
    def stderr(self) -> np.ndarray:
        mean = self.env + self.flash
        var = np.maximum(self.second_moment - mean * mean, 0.0)
        return np.sqrt(var / max(self.spp - 1, 1))


# --- closed-form helpers -------------------------------------------------------------

def transmittance(sigma_t, distance: float) -> Spectrum:
    if distance < 0:
        raise ValueError("distance must be non-negative")
    s = Spectrum.of(sigma_t).array()
    return Spectrum.of(np.exp(-s * distance))


def sample_free_flight(sigma_t_channel: float, rng) -> tuple:
    """Exponential distance sample: (d, pdf). ``rng`` is a uniform in [0,1)
    or anything with a ``random()`` method."""
    if sigma_t_channel <= 0:
        raise ZeroExtinction("free-flight sampling needs sigma_t > 0")
    u = float(rng) if np.isscalar(rng) else float(rng.random())
    d = -math.log1p(-u) / sigma_t_channel
    return d, sigma_t_channel * math.exp(-sigma_t_channel * d)


# --- packing ---------------------------------------------------------------------------

_EMPTY_V = np.zeros((0, 3))
_EMPTY_I = np.zeros((0, 3), dtype=np.int64)
_EMPTY_M = np.zeros((0, 4), dtype=np.int64)
_EMPTY_TEX = np.ones((1, 1))
_EMPTY_XF = np.zeros(13)


@lru_cache(maxsize=16)
def _mesh_arrays(mesh: TriangleMesh):
    bvh = build_bvh(mesh)
    return (mesh.vertices, bvh.tris, mesh.normals, bvh.bmin, bvh.bmax, bvh.meta)


def _geometry_args(geom: Geometry):
    if isinstance(geom, Sphere):
        sph = np.array([*geom.center, geom.radius])
        return K.GEO_SPHERE, (sph, _EMPTY_V, _EMPTY_I, _EMPTY_V, _EMPTY_V, _EMPTY_V, _EMPTY_M)
    require_watertight(geom)
    return K.GEO_MESH, (np.zeros(4),) + _mesh_arrays(geom)


def _env_args(env):
    if env is None:
        return K.ENV_NONE, np.zeros((3, 9)), np.zeros((1, 2, 3)), 0.0
    if isinstance(env, EnvMap):
        return K.ENV_IMAGE, np.zeros((3, 9)), env.pixels, float(env.yaw)
    sh = np.ascontiguousarray(np.asarray(env, dtype=np.float64).reshape(3, 9))
    return K.ENV_SH, sh, np.zeros((1, 2, 3)), 0.0


def _rough_args(rough):
    if isinstance(rough, RoughnessTexture):
        return 1, 1.0, rough.image, rough.packed()
    r = float(rough)
    if not 0.0 <= r <= 1.0:
        raise ValueError("roughness must lie in [0, 1]")
    return 0, r, _EMPTY_TEX, _EMPTY_XF


def _params(geo_kind, rough_args, sss, env_args, flash, camera, cfg, eta):
    ip = np.zeros(K.N_IPARAMS, dtype=np.int64)
    fp = np.zeros(K.N_FPARAMS)
    ip[K.I_WIDTH], ip[K.I_HEIGHT] = camera.resolution
    ip[K.I_SPP] = cfg.spp
    ip[K.I_MAX_BOUNCES] = cfg.max_bounces
    ip[K.I_RR_START] = cfg.rr_start
    ip[K.I_ENV] = env_args[0]
    ip[K.I_GEO] = geo_kind
    ip[K.I_RTEX] = rough_args[0]
    ip[K.I_JITTER] = int(cfg.pixel_jitter)
    ip[K.I_SINGLE] = int(cfg.single_scatter)
    ip[K.I_VOLUME] = int(cfg.volume_events)
    ip[K.I_UNIFORM_PHASE] = int(cfg.uniform_phase)
    ip[K.I_FLASH] = int(flash is not None)
    ip[K.I_NEE] = int(cfg.nee)
    fp[K.F_ROUGH] = rough_args[1]
    fp[K.F_ETA] = eta
    fp[K.F_SIGMA:K.F_SIGMA + 3] = sss.sigma_t
    fp[K.F_ALBEDO:K.F_ALBEDO + 3] = sss.alpha
    fp[K.F_G] = sss.g
    if flash is not None:
        fp[K.F_FLASH_C:K.F_FLASH_C + 3] = flash.center
        fp[K.F_FLASH_R] = flash.radius
        fp[K.F_FLASH_L] = flash.radiance
    fp[K.F_YAW] = env_args[3]
    right, up, fwd = camera.basis()
    fp[K.F_CAM:K.F_CAM + 3] = camera.position
    fp[K.F_RIGHT:K.F_RIGHT + 3] = right
    fp[K.F_UP:K.F_UP + 3] = up
    fp[K.F_FWD:K.F_FWD + 3] = fwd
    fp[K.F_TAN] = camera.tan_half
    fp[K.F_ASPECT] = camera.width / camera.height
    return ip, fp


def _window(cfg: TraceConfig, camera: Camera):
    if cfg.window is None:
        return 0, 0, camera.width, camera.height
    x0, y0, x1, y1 = (int(v) for v in cfg.window)
    if not (0 <= x0 < x1 <= camera.width and 0 <= y0 < y1 <= camera.height):
        raise ValueError(f"window {cfg.window} outside the image")
    return x0, y0, x1, y1


def trace_components(geom: Geometry, rough: Roughness, sss: SssParams, env,
                     flash: FlashLight | None, camera: Camera, cfg: TraceConfig = TraceConfig(),
                     eta: float = IOR) -> TraceResult:
    """Render and keep the environment and flash contributions separate.

    ``env`` is an EnvMap, a 3x9 SH radiance block, or None for darkness.
    ``eta=1`` makes the boundary index-matched (a pass-through surface).
    """
    geo_kind, garrs = _geometry_args(geom)
    rargs = _rough_args(rough)
    eargs = _env_args(env)
    ip, fp = _params(geo_kind, rargs, sss, eargs, flash, camera, cfg, eta)
    wx0, wy0, wx1, wy1 = _window(cfg, camera)
    shape = (wy1 - wy0, wx1 - wx0, 3)
    out_env = np.zeros(shape)
    out_flash = np.zeros(shape)
    out_m2 = np.zeros(shape)
    seed = np.uint64(int(cfg.seed) % (1 << 64))
    jobs = [(x0 + wx0, y0 + wy0, x1 + wx0, y1 + wy0)
            for x0, y0, x1, y1 in tiles(wx1 - wx0, wy1 - wy0, cfg.tile)]

    def work(t):
        K.render_tile(t[0], t[1], t[2], t[3], wx0, wy0, seed, ip, fp, *garrs, rargs[2],
                      rargs[3], eargs[1], eargs[2], out_env, out_flash, out_m2)

    run_tasks(work, jobs, cfg.threads)
    return TraceResult(out_env, out_flash, out_m2, cfg.spp)


def trace(geom: Geometry, rough: Roughness, sss: SssParams, env, flash: FlashLight | None,
          camera: Camera, cfg: TraceConfig = TraceConfig(), eta: float = IOR) -> Image:
    return trace_components(geom, rough, sss, env, flash, camera, cfg, eta).image


def raycast_gbuffer(geom: Geometry, rough: Roughness, camera: Camera, threads=None) -> GBuffer:
    """Ground-truth depth, camera-space normals, roughness and mask."""
    geo_kind, garrs = _geometry_args(geom) if not isinstance(geom, TriangleMesh) else (
        K.GEO_MESH, (np.zeros(4),) + _mesh_arrays(geom))
    rargs = _rough_args(rough)
    ip, fp = _params(geo_kind, rargs, SssParams.unchecked(0, 0, 0), _env_args(None), None,
                     camera, TraceConfig(), IOR)
    h, w = camera.height, camera.width
    depth = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    normal[..., 2] = 1.0
    rmap = np.ones((h, w))
    mask = np.zeros((h, w))

    def work(t):
        K.raycast_tile(t[0], t[1], t[2], t[3], ip, fp, *garrs, rargs[2], rargs[3], depth,
                       normal, rmap, mask)

    run_tasks(work, tiles(w, h, 32), threads)
    right, up, fwd = camera.basis()
    hit = mask > 0
    normal[hit] = normal[hit] @ np.stack([right, up, -fwd], axis=1)
    normal[~hit] = (0.0, 0.0, 1.0)
    rmap = np.clip(rmap, 1e-6, 1.0)
    return GBuffer(Image(depth[..., None]), Image(normal), Image(rmap[..., None]),
                   Image(mask[..., None]))


# --- scene-level rendering ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scene:
    """Everything the tracer needs for one flash/no-flash pair."""

    geometry: Geometry
    roughness: Roughness
    sss: SssParams
    env: object
    flash_radiance: float
    camera: Camera = Camera()
    jitter_deg: float = 0.5
    jitter_seed: int = 0

    def noflash_camera(self) -> Camera:
        return self.camera.jittered(self.jitter_deg, np.random.default_rng(self.jitter_seed))

    def flash(self) -> FlashLight:
        return FlashLight.for_camera(self.camera, self.flash_radiance)

    def with_sss(self, sss: SssParams) -> "Scene":
        return replace(self, sss=sss)


def render_scene_pair(scene: Scene, cfg: TraceConfig = TraceConfig()):
    """(flash image, no-flash image). The no-flash shot drops the emitter
    and uses the jittered camera."""
    flash = trace(scene.geometry, scene.roughness, scene.sss, scene.env, scene.flash(),
                  scene.camera, cfg)
    noflash = trace(scene.geometry, scene.roughness, scene.sss, scene.env, None,
                    scene.noflash_camera(), cfg)
    return flash, noflash


SSS_SPHERE = Sphere((0.0, 0.0, 0.0), 0.25)
SSS_SPHERE_ROUGHNESS = 0.05


def render_sss_sphere(sss: SssParams, illum, cfg: TraceConfig = TraceConfig(),
                      camera: Camera | None = None, flash: FlashLight | None = None) -> Image:
    """Canonical visualization sphere under ``illum`` (EnvMap or 3x9 SH)."""
    return trace(SSS_SPHERE, SSS_SPHERE_ROUGHNESS, sss, illum, flash, camera or Camera(), cfg)
