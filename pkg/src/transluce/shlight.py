"""Order-2 real spherical harmonics: basis, projection, evaluation.

Convention: orthonormal real SH without the Condon-Shortley phase, +y up,
coefficient order (Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22).
Environment maps are equirectangular with +y at the top row; the column
coordinate u = 0.5 + atan2(x, -z) / (2 pi), so the image center looks down -z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._parallel import run_tasks
from .core import Image
from .errors import EmptyEnvMap, NotUnit
from .rng import RandomStream

CONVENTION = "real-orthonormal-no-condon-shortley/y-up/order:00,1-1,10,11,2-2,2-1,20,21,22"

C0 = 0.5 / math.sqrt(math.pi)
C1 = math.sqrt(3.0 / (4.0 * math.pi))
C2 = 0.5 * math.sqrt(15.0 / math.pi)
C20 = 0.25 * math.sqrt(5.0 / math.pi)
C22 = 0.25 * math.sqrt(15.0 / math.pi)

BAND = np.array([0, 1, 1, 1, 2, 2, 2, 2, 2])
# clamped-cosine convolution factors per band
COSINE_LOBE = np.array([math.pi, 2 * math.pi / 3, math.pi / 4])

_UNIT_TOL = 1e-6


def _check_unit(d):
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(n - 1.0) > _UNIT_TOL):
        raise NotUnit(f"direction norm {np.max(np.abs(n - 1.0)) + 1:.9g} is not 1")
    return d


def basis_unchecked(d: np.ndarray) -> np.ndarray:
    """The nine basis polynomials for directions of shape (..., 3)."""
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, C0),
        C1 * y, C1 * z, C1 * x,
        C2 * x * y, C2 * y * z,
        C20 * (3 * z * z - 1),
        C2 * x * z,
        C22 * (x * x - y * y),
    ], axis=-1)


def basis_gradient(d: np.ndarray) -> np.ndarray:
    """d(basis)/d(direction) for (..., 3) inputs, shape (..., 9, 3)."""
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    rows = [
        (zero, zero, zero),
        (zero, C1 * one, zero),
        (zero, zero, C1 * one),
        (C1 * one, zero, zero),
        (C2 * y, C2 * x, zero),
        (zero, C2 * z, C2 * y),
        (zero, zero, 6 * C20 * z),
        (C2 * z, zero, C2 * x),
        (2 * C22 * x, -2 * C22 * y, zero),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def sh_basis(direction) -> np.ndarray:
    return basis_unchecked(_check_unit(direction))


def eval_radiance(sh, direction) -> np.ndarray:
    """Per-channel sum of c_i Y_i(dir); may be negative."""
    y = basis_unchecked(_check_unit(direction))
    return y @ np.asarray(sh, dtype=np.float64).reshape(3, 9).T


def irradiance(sh, normal) -> np.ndarray:
    y = basis_unchecked(_check_unit(normal))
    a = COSINE_LOBE[BAND]
    e = (y * a) @ np.asarray(sh, dtype=np.float64).reshape(3, 9).T
    return np.maximum(e, 0.0)


def band_power(sh) -> np.ndarray:
    sh = np.asarray(sh).reshape(3, 9)
    return np.stack([np.sum(sh[:, BAND == l] ** 2, axis=1) for l in range(3)], axis=1)


# --- environment maps ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvMap:
    image: Image
    yaw: float = 0.0
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.image.width * self.image.height == 0:
            raise EmptyEnvMap("environment map has no pixels")
        if not self.check:
            return
        if self.image.width != 2 * self.image.height:
            raise ValueError("equirectangular map needs width = 2*height")
        if self.image.channels != 3:
            raise ValueError("environment map must be RGB")
        if np.any(self.image.data < 0):
            raise ValueError("environment radiance must be non-negative")

    @property
    def pixels(self) -> np.ndarray:
        return np.ascontiguousarray(self.image.data, dtype=np.float64)

    def lookup(self, directions) -> np.ndarray:
        d = np.asarray(directions, dtype=np.float64)
        flat = d.reshape(-1, 3)
        out = np.empty((flat.shape[0], 3))
        _lookup_many(self.pixels, float(self.yaw), flat, out)
        return out.reshape(d.shape[:-1] + (3,))


@njit(cache=True, inline="always")
def env_lookup(img, yaw, dx, dy, dz):
    """Bilinear lookup of an equirectangular map rotated by ``yaw`` about +y."""
    h, w = img.shape[0], img.shape[1]
    c, s = math.cos(yaw), math.sin(yaw)
    # rotate the query by -yaw
    x = c * dx - s * dz
    z = s * dx + c * dz
    y = min(1.0, max(-1.0, dy))
    u = 0.5 + math.atan2(x, -z) / (2.0 * math.pi)
    v = math.acos(y) / math.pi
    fx = u * w - 0.5
    fy = v * h - 0.5
    x0 = math.floor(fx)
    y0 = math.floor(fy)
    tx = fx - x0
    ty = fy - y0
    r = 0.0
    g = 0.0
    b = 0.0
    for j in range(2):
        yy = int(y0) + j
        if yy < 0:
            yy = 0
        elif yy > h - 1:
            yy = h - 1
        wy = ty if j == 1 else 1.0 - ty
        for i in range(2):
            xx = (int(x0) + i) % w
            wx = tx if i == 1 else 1.0 - tx
            wgt = wx * wy
            r += wgt * img[yy, xx, 0]
            g += wgt * img[yy, xx, 1]
            b += wgt * img[yy, xx, 2]
    return r, g, b


@njit(cache=True)
def _lookup_many(img, yaw, dirs, out):
    for k in range(dirs.shape[0]):
        r, g, b = env_lookup(img, yaw, dirs[k, 0], dirs[k, 1], dirs[k, 2])
        out[k, 0] = r
        out[k, 1] = g
        out[k, 2] = b


def equirect_directions(width: int, height: int) -> np.ndarray:
    """Unit directions through the texel centers of a (height, width) map."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    phi = (u - 0.5) * 2 * np.pi
    theta = v * np.pi
    st = np.sin(theta)[:, None]
    x = st * np.sin(phi)[None, :]
    y = np.repeat(np.cos(theta)[:, None], width, axis=1)
    z = -st * np.cos(phi)[None, :]
    return np.stack([x, y, z], axis=-1)


def envmap_from_sh(sh, height=128, clamp=True) -> EnvMap:
    """Synthesize an equirectangular map whose texels are the SH expansion."""
    d = equirect_directions(2 * height, height)
    img = basis_unchecked(d) @ np.asarray(sh, dtype=np.float64).reshape(3, 9).T
    if clamp:
        img = np.maximum(img, 0.0)
    return EnvMap(Image(img), check=clamp)


# --- projection --------------------------------------------------------------

_BLOCK = 65536


def stratified_sphere(n: int, u: np.ndarray) -> np.ndarray:
    """Equal-area jittered strata on the unit sphere.

    Rows are z-bands whose widths are proportional to their sample counts,
    and each row is split evenly in azimuth, so every stratum has area 4pi/n.
    ``u`` holds at least 2n uniforms.
    """
    rows = max(1, int(math.sqrt(n / 2)))
    counts = np.full(rows, n // rows)
    counts[: n % rows] += 1
    row = np.repeat(np.arange(rows), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    col = np.arange(n) - first[row]
    z_top = 1 - 2 * first / n
    z = z_top[row] - 2 * counts[row] / n * u[0:2 * n:2]
    phi = 2 * np.pi * (col + u[1:2 * n:2]) / counts[row]
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def project_envmap(env: EnvMap, n_samples: int = 1_000_000, seed: int = 0,
                   threads=None) -> np.ndarray:
    """Estimate the 3x9 radiance coefficients by stratified uniform-sphere MC.

    Samples are split into fixed blocks with their own streams, so the result
    does not depend on the worker count.
    """
    if env.image.width * env.image.height == 0:
        raise EmptyEnvMap("environment map has no pixels")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    dirs = sample_directions(n_samples, seed)
    starts = list(range(0, n_samples, _BLOCK))

    def block(s):
        d = dirs[s:s + _BLOCK]
        return basis_unchecked(d).T @ env.lookup(d)

    parts = run_tasks(block, starts, threads)
    acc = np.zeros((9, 3))
    for p in parts:
        acc += p
    return (4 * np.pi / n_samples) * acc.T


def sample_directions(n_samples: int, seed: int) -> np.ndarray:
    u = RandomStream(seed, 0, 0).random(2 * n_samples)
    return stratified_sphere(n_samples, u)


def project_function(fn, n_samples: int, seed: int = 0) -> np.ndarray:
    """Project an arbitrary ``fn(dirs) -> (N, 3)`` radiance function."""
    d = sample_directions(n_samples, seed)
    return (4 * np.pi / n_samples) * (basis_unchecked(d).T @ fn(d)).T


def rotate_sh_yaw(sh, yaw: float) -> np.ndarray:
    """Rotate SH lighting about +y by ``yaw`` (matching EnvMap.yaw)."""
    sh = np.asarray(sh, dtype=np.float64).reshape(3, 9)
    # numerically: project the rotated expansion with an exact quadrature
    d = _quad_dirs()
    c, s = math.cos(yaw), math.sin(yaw)
    x, z = d[:, 0], d[:, 2]
    src = np.stack([c * x - s * z, d[:, 1], s * x + c * z], axis=-1)
    vals = basis_unchecked(src) @ sh.T
    return ((basis_unchecked(d).T * _quad_w()) @ vals).T


_QD = None


def _quad():
    global _QD
    if _QD is None:
        mu, wmu = np.polynomial.legendre.leggauss(8)
        nphi = 16
        phi = (np.arange(nphi) + 0.5) * 2 * np.pi / nphi
        m, p = np.meshgrid(mu, phi, indexing="ij")
        r = np.sqrt(1 - m * m)
        d = np.stack([r * np.cos(p), r * np.sin(p), m], axis=-1).reshape(-1, 3)
        w = (wmu[:, None] * np.full(nphi, 2 * np.pi / nphi)[None, :]).ravel()
        _QD = (d, w)
    return _QD


def _quad_dirs():
    return _quad()[0]


def _quad_w():
    return _quad()[1]
