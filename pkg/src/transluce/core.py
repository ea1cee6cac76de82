"""Domain types and the normalized parameter codec."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import InvalidT, LayoutMismatch, OutOfRange, ShapeMismatch

IOR = 1.5046
FLASH_RADIUS = 0.10
FLASH_OFFSET = 0.10
DEFAULT_FOV = 40.0


class Spectrum(NamedTuple):
    r: float
    g: float
    b: float

    @classmethod
    def of(cls, value) -> "Spectrum":
        if np.isscalar(value):
            value = (value, value, value)
        r, g, b = (float(v) for v in value)
        if not all(math.isfinite(v) for v in (r, g, b)):
            raise ValueError(f"non-finite spectrum {value!r}")
        return cls(r, g, b)

    def array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def _readonly(a):
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major raster of shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ShapeMismatch(f"image must be HxWx1 or HxWx3, got {a.shape}")
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64)
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", _readonly(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @classmethod
    def zeros(cls, width, height, channels=3, dtype=np.float64) -> "Image":
        return cls(np.zeros((height, width, channels), dtype=dtype))

    def astype(self, dtype) -> "Image":
        return Image(self.data.astype(dtype))

    def equals(self, other: "Image") -> bool:
        return (self.data.shape == other.data.shape
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class GBuffer:
    depth: Image
    normal: Image
    roughness: Image
    mask: Image
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        shapes = {(im.height, im.width) for im in
                  (self.depth, self.normal, self.roughness, self.mask)}
        if len(shapes) != 1:
            raise ShapeMismatch(f"gbuffer rasters disagree in size: {shapes}")
        if self.normal.channels != 3 or self.depth.channels != 1:
            raise ShapeMismatch("depth must be 1ch and normal 3ch")
        if not self.check:
            return
        m = self.mask_bool
        if not np.all((self.mask.data == 0) | (self.mask.data == 1)):
            raise ValueError("mask values must be 0 or 1")
        n = self.normal.data[m]
        if n.size and np.max(np.abs(np.linalg.norm(n, axis=-1) - 1.0)) > 1e-4:
            raise ValueError("normals must be unit length on the mask")
        r = self.roughness.data[..., 0]
        if np.any(r <= 0) or np.any(r > 1):
            raise ValueError("roughness must lie in (0, 1]")
        if np.any(self.depth.data[..., 0][m] <= 0):
            raise ValueError("depth must be positive on the mask")

    @property
    def width(self) -> int:
        return self.depth.width

    @property
    def height(self) -> int:
        return self.depth.height

    @property
    def mask_bool(self) -> np.ndarray:
        return self.mask.data[..., 0] > 0.5

    def with_roughness(self, rough) -> "GBuffer":
        rough = np.asarray(rough, dtype=np.float64).reshape(self.height, self.width, 1)
        return replace(self, roughness=Image(rough))


@dataclass(frozen=True)
class SssParams:
    """Homogeneous medium: extinction (1/m), volumetric albedo and HG g."""

    sigma_t: Spectrum
    alpha: Spectrum
    g: float
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma_t", Spectrum.of(self.sigma_t))
        object.__setattr__(self, "alpha", Spectrum.of(self.alpha))
        object.__setattr__(self, "g", float(self.g))
        if not self.check:
            return
        if min(self.sigma_t) < 0:
            raise OutOfRange("sigma_t", self.sigma_t)
        if min(self.alpha) < 0 or max(self.alpha) >= 1:
            raise OutOfRange("alpha", self.alpha)
        if not -1 < self.g < 1:
            raise OutOfRange("g", self.g)

    @classmethod
    def unchecked(cls, sigma_t, alpha, g) -> "SssParams":
        """Bypass the invariants (furnace tests use alpha = 1)."""
        return cls(sigma_t, alpha, g, check=False)

    @property
    def sigma_s(self) -> Spectrum:
        return Spectrum(*(s * a for s, a in zip(self.sigma_t, self.alpha)))

    def as_array(self) -> np.ndarray:
        return np.array([*self.sigma_t, *self.alpha, self.g])

    @classmethod
    def from_array(cls, a) -> "SssParams":
        a = np.asarray(a, dtype=np.float64)
        return cls(tuple(a[0:3]), tuple(a[3:6]), a[6])

    def to_dict(self) -> dict:
        return {"sigma_t": list(self.sigma_t), "alpha": list(self.alpha), "g": self.g}

    @classmethod
    def from_dict(cls, d) -> "SssParams":
        return cls(d["sigma_t"], d["alpha"], d["g"])


@dataclass(frozen=True, eq=False)
class Illumination:
    sh: np.ndarray
    flash_intensity: float

    def __post_init__(self):
        sh = np.array(self.sh, dtype=np.float64).reshape(3, 9)
        if not np.all(np.isfinite(sh)):
            raise ValueError("sh coefficients must be finite")
        if not (math.isfinite(self.flash_intensity) and self.flash_intensity >= 0):
            raise OutOfRange("flash_intensity", self.flash_intensity)
        object.__setattr__(self, "sh", _readonly(sh))
        object.__setattr__(self, "flash_intensity", float(self.flash_intensity))

    def scaled(self, a: float) -> "Illumination":
        return Illumination(self.sh * a, self.flash_intensity * a)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class Camera:
    position: tuple = (0.0, 0.0, 0.7)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    vertical_fov: float = DEFAULT_FOV
    resolution: tuple = (256, 256)

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        object.__setattr__(self, "resolution", tuple(int(x) for x in self.resolution))
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position equals look_at")
        if not 0 < self.vertical_fov < 180:
            raise OutOfRange("vertical_fov", self.vertical_fov, 0, 180)
        if min(self.resolution) < 1:
            raise ValueError("resolution must be positive")

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    def basis(self):
        """(right, up, forward) orthonormal camera frame."""
        fwd = _unit(np.subtract(self.look_at, self.position))
        right = np.cross(fwd, self.up)
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(fwd, (1.0, 0.0, 0.0))
        right = _unit(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.vertical_fov) / 2)

    def pixel_rays(self, offset=(0.5, 0.5)) -> np.ndarray:
        """Unit ray directions through every pixel (row 0 is the top)."""
        right, up, fwd = self.basis()
        w, h = self.resolution
        th = self.tan_half
        aspect = w / h
        xs = (2 * (np.arange(w) + offset[0]) / w - 1) * th * aspect
        ys = (1 - 2 * (np.arange(h) + offset[1]) / h) * th
        d = (fwd[None, None, :] + xs[None, :, None] * right[None, None, :]
             + ys[:, None, None] * up[None, None, :])
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, points) -> np.ndarray:
        """World points to continuous pixel coordinates (x, y)."""
        right, up, fwd = self.basis()
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.position)
        z = p @ fwd
        w, h = self.resolution
        th = self.tan_half
        sx = (p @ right) / (z * th * (w / h))
        sy = (p @ up) / (z * th)
        return np.stack([(sx + 1) * w / 2, (1 - sy) * h / 2], axis=-1)

    def flash_center(self, offset=FLASH_OFFSET) -> np.ndarray:
        _, _, fwd = self.basis()
        return np.asarray(self.position) - offset * fwd

    def jittered(self, angle_deg: float, rng: np.random.Generator) -> "Camera":
        """Rotate the look-at direction by ``angle_deg`` about a random axis
        perpendicular to the view direction."""
        if angle_deg == 0:
            return self
        right, up, fwd = self.basis()
        phi = rng.uniform(0, 2 * math.pi)
        axis = math.cos(phi) * right + math.sin(phi) * up
        th = math.radians(angle_deg)
        d = np.subtract(self.look_at, self.position)
        # Rodrigues; axis is perpendicular to d
        d_rot = d * math.cos(th) + np.cross(axis, d) * math.sin(th)
        return replace(self, look_at=tuple(np.asarray(self.position) + d_rot))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "look_at": list(self.look_at),
                "up": list(self.up), "vfov": self.vertical_fov,
                "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, d) -> "Camera":
        return cls(d["position"], d["look_at"], d.get("up", (0, 1, 0)),
                   d.get("vfov", DEFAULT_FOV), d.get("resolution", (256, 256)))


# --- normalized parameter codec ------------------------------------------

LAYOUT_ORDER = ("roughness", "sh", "flash_intensity", "sigma_t", "alpha", "g")


@dataclass(frozen=True)
class ParamRanges:
    roughness: tuple = (0.01, 1.0)
    sh: tuple = (-3.0, 3.0)
    flash_intensity: tuple = (35.0, 75.0)
    sigma_t: tuple = (0.0, 32.0)
    alpha: tuple = (0.3, 0.95)
    g: tuple = (0.0, 0.9)
    epsilon: float = 1e-9

    @classmethod
    def with_shmax(cls, shmax: float) -> "ParamRanges":
        return cls(sh=(-shmax, shmax))

    def half_width(self, name) -> float:
        lo, hi = getattr(self, name)
        return (hi - lo) / 2


@dataclass(frozen=True, eq=False)
class SceneParams:
    """Physical values of every optimizable quantity."""

    roughness: np.ndarray
    sh: np.ndarray
    flash_intensity: float
    sss: SssParams

    def __post_init__(self):
        object.__setattr__(self, "roughness", np.asarray(self.roughness, dtype=np.float64))
        object.__setattr__(self, "sh", np.asarray(self.sh, dtype=np.float64).reshape(3, 9))
        object.__setattr__(self, "flash_intensity", float(self.flash_intensity))

    @property
    def illumination(self) -> Illumination:
        return Illumination(self.sh, self.flash_intensity)


@dataclass(frozen=True, eq=False)
class ParamLayout:
    """Maps named groups onto contiguous slices of a flat vector."""

    shapes: tuple  # ((name, shape), ...)

    @classmethod
    def for_raster(cls, height, width) -> "ParamLayout":
        return cls((("roughness", (height, width)), ("sh", (3, 9)),
                    ("flash_intensity", ()), ("sigma_t", (3,)),
                    ("alpha", (3,)), ("g", ())))

    @property
    def slices(self) -> dict:
        out, start = {}, 0
        for name, shape in self.shapes:
            n = int(np.prod(shape)) if shape else 1
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) if s else 1 for _, s in self.shapes)

    def shape_of(self, name):
        return dict(self.shapes)[name]

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.shapes == other.shapes

    def __hash__(self):
        return hash(self.shapes)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.layout.size:
            raise LayoutMismatch(f"vector of {v.size} for layout of {self.layout.size}")
        object.__setattr__(self, "values", v)

    def group(self, name) -> np.ndarray:
        v = self.values[self.layout.slices[name]]
        shape = self.layout.shape_of(name)
        return v.reshape(shape) if shape else v[0]

    def copy_with(self, values) -> "ParamVector":
        return type(self)(np.array(values, dtype=np.float64), self.layout)


class GradVector(ParamVector):
    """Gradient entries laid out exactly like their ParamVector."""


def _norm(x, lo, hi):
    return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0


def _denorm(v, lo, hi):
    return lo + (np.asarray(v, dtype=np.float64) + 1.0) * (hi - lo) / 2.0


def normalize_params(physical: SceneParams, ranges: ParamRanges = ParamRanges()) -> ParamVector:
    rough = physical.roughness
    layout = ParamLayout.for_raster(*rough.shape[:2])
    groups = {"roughness": rough, "sh": physical.sh,
              "flash_intensity": physical.flash_intensity,
              "sigma_t": np.array(physical.sss.sigma_t),
              "alpha": np.array(physical.sss.alpha), "g": physical.sss.g}
    parts = []
    for name in LAYOUT_ORDER:
        lo, hi = getattr(ranges, name)
        x = np.atleast_1d(np.asarray(groups[name], dtype=np.float64)).ravel()
        eps = ranges.epsilon * max(1.0, abs(hi - lo))
        bad = (x < lo - eps) | (x > hi + eps)
        if np.any(bad):
            raise OutOfRange(name, float(x[np.argmax(bad)]), lo, hi)
        parts.append(np.clip(_norm(x, lo, hi), -1.0, 1.0))
    return ParamVector(np.concatenate(parts), layout)


def denormalize_params(v: ParamVector, ranges: ParamRanges = ParamRanges()) -> SceneParams:
    if set(dict(v.layout.shapes)) != set(LAYOUT_ORDER):
        raise LayoutMismatch("vector layout lacks the scene parameter groups")
    out = {name: _denorm(v.group(name), *getattr(ranges, name)) for name in LAYOUT_ORDER}
    sss = SssParams.unchecked(tuple(out["sigma_t"]), tuple(out["alpha"]), float(out["g"]))
    return SceneParams(out["roughness"], out["sh"], float(out["flash_intensity"]), sss)


def normalize_value(name, x, ranges: ParamRanges = ParamRanges()):
    return _norm(x, *getattr(ranges, name))


def denormalize_value(name, v, ranges: ParamRanges = ParamRanges()):
    return _denorm(v, *getattr(ranges, name))


def lerp_sss(a: SssParams, b: SssParams, t: float) -> SssParams:
    if not 0.0 <= t <= 1.0:
        raise InvalidT(f"t={t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    mix = (1.0 - t) * a.as_array() + t * b.as_array()
    return SssParams.from_array(mix)
