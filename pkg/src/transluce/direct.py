"""Screen-space direct-illumination renderer with analytic gradients.

Each masked pixel is shaded from its G-buffer entries under order-2 SH
lighting plus the flash, treated here as a point emitter at the center of
the sphere light:

    flash    = i * A * F(v.h) * D(n.h) * G1(n.l) * G1(n.v) / (4 * n.v * dist^2)
    diffuse  = (1 - F(1)) / pi * max(E(n), 0)
    specular = F(n.v) * max(sum_k damp_l(r) * c_k * Y_k(m), 0)

with A = pi * flash_radius^2, E the cosine-convolved SH irradiance,
m = 2 (n.v) n - v the mirror direction and damp_l = exp(-l (l + 1) r^2 / 2).
The flash term is zero unless n.l, n.v and n.h are all positive. G-buffer
normals are in camera space (x right, y up, z toward the viewer); depth is
the distance along the pixel-center ray.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ._parallel import run_tasks
from .core import (FLASH_RADIUS, IOR, Camera, GBuffer, GradVector, Illumination, Image,
                   ParamLayout, ParamRanges)
from .errors import MaskEmpty, ShapeMismatch
from .shlight import BAND, COSINE_LOBE, basis_gradient, basis_unchecked

FLASH_AREA = np.pi * FLASH_RADIUS ** 2
_LL1 = (BAND * (BAND + 1)).astype(np.float64)
_LOBE = COSINE_LOBE[BAND]
_ROWS = 32  # tile height for parallel shading


class DirectGradient(NamedTuple):
    """Gradients of <adjoint, image>.

    ``params`` is in normalized space (scattering entries are zero since the
    direct renderer does not depend on them); ``depth`` and ``normal`` are
    physical raster gradients.
    """

    params: GradVector
    depth: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class ShadingContext:
    position: np.ndarray
    normal: np.ndarray
    roughness: np.ndarray
    mask: np.ndarray
    view: np.ndarray
    flash_dir: np.ndarray
    falloff: np.ndarray


# --- closed-form pieces and their derivatives ----------------------------------

def fresnel_and_slope(c, eta=IOR):
    """Dielectric reflectance for incidence from outside and dF/dcos."""
    c = np.asarray(c, dtype=np.float64)
    g = np.sqrt(eta * eta - 1.0 + c * c)
    dg = c / g
    a = (g - c) / (g + c)
    da = ((dg - 1.0) * (g + c) - (g - c) * (dg + 1.0)) / (g + c) ** 2
    u = c * (g + c) - 1.0
    du = (g + c) + c * (dg + 1.0)
    w = c * (g - c) + 1.0
    dw = (g - c) + c * (dg - 1.0)
    b = u / w
    db = (du * w - u * dw) / (w * w)
    f = 0.5 * a * a * (1.0 + b * b)
    df = a * da * (1.0 + b * b) + a * a * b * db
    return f, df


def ggx_and_slopes(nh, a2):
    den = nh * nh * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * den * den)
    d_nh = -4.0 * a2 * nh * (a2 - 1.0) / (np.pi * den ** 3)
    d_a2 = (den - 2.0 * a2 * nh * nh) / (np.pi * den ** 3)
    return d, d_nh, d_a2


def g1_and_slopes(c, a2):
    s = np.sqrt(a2 + (1.0 - a2) * c * c)
    cs2 = (c + s) ** 2
    return 2.0 * c / (c + s), 2.0 * a2 / (s * cs2), -c * (1.0 - c * c) / (s * cs2)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


# --- per-tile shading ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Setup:
    rays: np.ndarray
    origin: np.ndarray
    flash: np.ndarray
    eta: float
    to_world: np.ndarray  # columns: camera right, up, backward


def camera_to_world(camera: Camera) -> np.ndarray:
    right, up, fwd = camera.basis()
    return np.stack([right, up, -fwd], axis=1)


def _setup(camera: Camera, eta=IOR) -> _Setup:
    return _Setup(camera.pixel_rays(), np.asarray(camera.position, dtype=np.float64),
                  camera.flash_center(), eta, camera_to_world(camera))


class _Tile(NamedTuple):
    image: np.ndarray
    signature: np.ndarray | None
    margin: np.ndarray | None
    g_rough: np.ndarray | None
    g_depth: np.ndarray | None
    g_normal: np.ndarray | None
    g_sh: np.ndarray | None
    g_i: float


def _shade(st: _Setup, rows, depth, normal, rough, mask, sh, intensity, adjoint=None,
           diagnostics=False) -> _Tile:
    y0, y1 = rows
    m = mask[y0:y1]
    shape = m.shape
    out = np.zeros(shape + (3,))
    d = st.rays[y0:y1][m]
    t = depth[y0:y1][m]
    n = normal[y0:y1][m] @ st.to_world.T
    r = rough[y0:y1][m]
    eta = st.eta
    f0 = ((eta - 1.0) / (eta + 1.0)) ** 2
    kd = (1.0 - f0) / np.pi

    x = st.origin + t[:, None] * d
    v = -d
    w = st.flash - x
    dist2 = _dot(w, w)
    dist = np.sqrt(dist2)
    l = w / dist[:, None]
    hv = l + v
    hl = np.sqrt(_dot(hv, hv))
    h = hv / hl[:, None]
    nl, nv, nh, vh = _dot(n, l), _dot(n, v), _dot(n, h), _dot(v, h)
    a2 = r ** 4
    active = (nl > 0) & (nv > 0) & (nh > 0)
    front = nv > 0
    nlc = np.where(active, nl, 1.0)
    nvc = np.where(front, nv, 1.0)
    nhc = np.where(active, nh, 1.0)

    fh, dfh = fresnel_and_slope(vh, eta)
    dd, dd_nh, dd_a2 = ggx_and_slopes(nhc, a2)
    gl, gl_c, gl_a2 = g1_and_slopes(nlc, a2)
    gv, gv_c, gv_a2 = g1_and_slopes(nvc, a2)
    unit = np.where(active, FLASH_AREA / 4.0 / (nvc * dist2), 0.0)
    q = intensity * unit
    flash = q * fh * dd * gl * gv

    y_n = basis_unchecked(n)
    e = (y_n * _LOBE) @ sh.T
    diffuse = kd * np.maximum(e, 0.0)

    mir = 2.0 * nv[:, None] * n - v
    y_m = basis_unchecked(mir)
    damp = np.exp(-0.5 * _LL1[None, :] * (r * r)[:, None])
    s = (y_m * damp) @ sh.T
    fv, dfv = fresnel_and_slope(np.clip(nvc, 0.0, 1.0), eta)
    fv = np.where(front, fv, 0.0)
    specular = fv[:, None] * np.maximum(s, 0.0)

    out[m] = flash[:, None] + diffuse + specular

    signature = margin = None
    if diagnostics:
        bits = np.stack([nl > 0, nv > 0, nh > 0, *(e > 0).T, *(s > 0).T], axis=-1)
        signature = np.zeros(shape, dtype=np.int64)
        signature[m] = bits @ (1 << np.arange(bits.shape[1]))
        margin = np.full(shape, np.inf)
        margin[m] = np.min(np.abs(np.column_stack([nl, nv, nh, e, s])), axis=1)

    if adjoint is None:
        return _Tile(out, signature, margin, None, None, None, None, 0.0)

    a = adjoint[y0:y1][m]
    a_sum = a.sum(axis=1)
    gf = np.where(active, a_sum, 0.0)

    p_f = q * dd * gl * gv
    p_d = q * fh * gl * gv
    p_gl = q * fh * dd * gv
    p_gv = q * fh * dd * gl
    g_nv = gf * (p_gv * gv_c - flash / nvc)
    g_nl = gf * p_gl * gl_c
    g_nh = gf * p_d * dd_nh
    g_vh = gf * p_f * dfh
    g_a2 = gf * (p_d * dd_a2 + p_gl * gl_a2 + p_gv * gv_a2)
    g_dist2 = -gf * flash / dist2
    g_i = float(np.sum(gf * unit * fh * dd * gl * gv))

    g_h = g_nh[:, None] * n + g_vh[:, None] * v
    g_l = g_nl[:, None] * n + (g_h - h * _dot(h, g_h)[:, None]) / hl[:, None]
    g_x = -(g_l - l * _dot(l, g_l)[:, None]) / dist[:, None] - 2.0 * g_dist2[:, None] * w
    g_t = _dot(g_x, d)

    # diffuse; at e == 0 the right-hand slope is used so an all-zero sh can move
    ge = a * kd * (e >= 0)
    g_sh = ge.T @ (y_n * _LOBE)
    g_n = g_nl[:, None] * l + g_nh[:, None] * h
    g_n += np.einsum("pk,pkj->pj", (ge @ sh) * _LOBE, basis_gradient(n))

    # specular
    gs = a * fv[:, None] * ((s >= 0) & front[:, None])
    g_sh += gs.T @ (y_m * damp)
    gs_k = gs @ sh
    g_r = np.sum(gs_k * y_m * damp * (-_LL1[None, :] * r[:, None]), axis=1)
    g_m = np.einsum("pk,pkj->pj", gs_k * damp, basis_gradient(mir))
    g_nv = g_nv + np.where(front, dfv * _dot(a, np.maximum(s, 0.0)), 0.0)
    g_n += 2.0 * (_dot(g_m, n)[:, None] * v + nv[:, None] * g_m)
    g_n += g_nv[:, None] * v
    g_r += g_a2 * 4.0 * r ** 3

    g_rough = np.zeros(shape)
    g_depth = np.zeros(shape)
    g_normal = np.zeros(shape + (3,))
    g_rough[m] = g_r
    g_depth[m] = g_t
    g_normal[m] = g_n @ st.to_world
    return _Tile(out, signature, margin, g_rough, g_depth, g_normal, g_sh, g_i)


def _inputs(g: GBuffer):
    return (np.ascontiguousarray(g.depth.data[..., 0], dtype=np.float64),
            np.ascontiguousarray(g.normal.data, dtype=np.float64),
            np.ascontiguousarray(g.roughness.data[..., 0], dtype=np.float64),
            g.mask_bool)


def _row_tiles(height):
    return [(y, min(y + _ROWS, height)) for y in range(0, height, _ROWS)]


def _check(g: GBuffer, camera: Camera):
    if (g.width, g.height) != tuple(camera.resolution):
        raise ShapeMismatch(f"gbuffer {g.width}x{g.height} vs camera {camera.resolution}")
    if not g.mask_bool.any():
        raise MaskEmpty("no pixel has mask=1")


def _run(g, illum, camera, adjoint=None, threads=None, diagnostics=False, eta=IOR):
    _check(g, camera)
    st = _setup(camera, eta)
    depth, normal, rough, mask = _inputs(g)
    sh = np.asarray(illum.sh, dtype=np.float64)
    parts = run_tasks(lambda rows: _shade(st, rows, depth, normal, rough, mask, sh,
                                          illum.flash_intensity, adjoint, diagnostics),
                      _row_tiles(g.height), threads)
    return parts


def render_direct(g: GBuffer, illum: Illumination, camera: Camera, threads=None,
                  eta=IOR) -> Image:
    parts = _run(g, illum, camera, threads=threads, eta=eta)
    return Image(np.concatenate([p.image for p in parts], axis=0))


def relight(g: GBuffer, new_illum: Illumination, camera: Camera, threads=None) -> Image:
    return render_direct(g, new_illum, camera, threads=threads)


def shading_diagnostics(g: GBuffer, illum: Illumination, camera: Camera):
    """Active-set signature and distance to the nearest clamp per pixel."""
    parts = _run(g, illum, camera, diagnostics=True)
    return (np.concatenate([p.signature for p in parts]),
            np.concatenate([p.margin for p in parts]))


def _to_normalized(g_rough, g_sh, g_i, ranges: ParamRanges, layout: ParamLayout):
    vec = np.zeros(layout.size)
    sl = layout.slices
    vec[sl["roughness"]] = g_rough.ravel() * ranges.half_width("roughness")
    vec[sl["sh"]] = np.asarray(g_sh).ravel() * ranges.half_width("sh")
    vec[sl["flash_intensity"]] = g_i * ranges.half_width("flash_intensity")
    return GradVector(vec, layout)


def backward_direct(g: GBuffer, illum: Illumination, camera: Camera, adjoint,
                    ranges: ParamRanges = ParamRanges(), threads=None) -> DirectGradient:
    adj = np.asarray(adjoint.data if isinstance(adjoint, Image) else adjoint, dtype=np.float64)
    if adj.shape != (g.height, g.width, 3):
        raise ShapeMismatch(f"adjoint shape {adj.shape} does not match the image")
    parts = _run(g, illum, camera, adjoint=adj, threads=threads)
    g_sh = np.zeros((3, 9))
    g_i = 0.0
    for p in parts:  # fixed tile order keeps sums bit-stable
        g_sh += p.g_sh
        g_i += p.g_i
    layout = ParamLayout.for_raster(g.height, g.width)
    params = _to_normalized(np.concatenate([p.g_rough for p in parts]), g_sh, g_i,
                            ranges, layout)
    return DirectGradient(params, np.concatenate([p.g_depth for p in parts]),
                          np.concatenate([p.g_normal for p in parts]))


# --- finite-difference oracle --------------------------------------------------------

def _gbuffer(depth, normal, rough, mask):
    return GBuffer(Image(depth[..., None]), Image(normal), Image(rough[..., None]),
                   Image(mask[..., None].astype(np.float64)), check=False)


@dataclass(frozen=True, eq=False)
class _Probe:
    name: str
    index: object        # None for raster probes (all pixels at once)
    delta: np.ndarray    # (I+ - I-) / (2 h), shape (H, W, 3)
    changed: np.ndarray  # pixels whose clamp active set differs between probes


def _probes(g: GBuffer, illum: Illumination, camera: Camera, step: float,
            ranges: ParamRanges, depth_step: float):
    """Central-difference probe images.

    Raster parameters are perturbed at every pixel simultaneously; this is
    valid because each output pixel reads only its own raster entries.
    """
    _check(g, camera)
    st = _setup(camera)
    depth, normal, rough, mask = _inputs(g)
    sh = np.asarray(illum.sh)
    tiles = _row_tiles(g.height)

    def run(dep, nrm, rgh, sh_, i_):
        parts = [_shade(st, rows, dep, nrm, rgh, mask, sh_, i_, diagnostics=True)
                 for rows in tiles]
        return (np.concatenate([p.image for p in parts]),
                np.concatenate([p.signature for p in parts]))

    _, base_sig = run(depth, normal, rough, sh, illum.flash_intensity)

    def pair(make, h):
        ip, sp = make(+h)
        im, sm = make(-h)
        return (ip - im) / (2 * h), (sp != base_sig) | (sm != base_sig)

    out = []
    hr = step * ranges.half_width("roughness")
    delta, ch = pair(lambda e: run(depth, normal, rough + e, sh, illum.flash_intensity), hr)
    out.append(_Probe("roughness", None, delta, ch))
    hs = step * ranges.half_width("sh")
    for k in range(27):
        def make(e, k=k):
            s2 = sh.copy().ravel()
            s2[k] += e
            return run(depth, normal, rough, s2.reshape(3, 9), illum.flash_intensity)
        delta, ch = pair(make, hs)
        out.append(_Probe("sh", k, delta, ch))
    hi = step * ranges.half_width("flash_intensity")
    delta, ch = pair(lambda e: run(depth, normal, rough, sh, illum.flash_intensity + e), hi)
    out.append(_Probe("flash_intensity", 0, delta, ch))
    delta, ch = pair(lambda e: run(depth + e, normal, rough, sh, illum.flash_intensity),
                     depth_step)
    out.append(_Probe("depth", None, delta, ch))
    for j in range(3):
        def make(e, j=j):
            n2 = normal.copy()
            n2[..., j] += e
            return run(depth, n2, rough, sh, illum.flash_intensity)
        delta, ch = pair(make, step)
        out.append(_Probe("normal", j, delta, ch))
    return out


def _contract(probes, adjoint, g: GBuffer, ranges: ParamRanges) -> DirectGradient:
    layout = ParamLayout.for_raster(g.height, g.width)
    g_sh = np.zeros(27)
    g_i = 0.0
    g_rough = g_depth = None
    g_normal = np.zeros((g.height, g.width, 3))
    for p in probes:
        per_pixel = np.sum(p.delta * adjoint, axis=-1)
        if p.name == "roughness":
            g_rough = per_pixel
        elif p.name == "sh":
            g_sh[p.index] = per_pixel.sum()
        elif p.name == "flash_intensity":
            g_i = float(per_pixel.sum())
        elif p.name == "depth":
            g_depth = per_pixel
        else:
            g_normal[..., p.index] = per_pixel
    return DirectGradient(_to_normalized(g_rough, g_sh, g_i, ranges, layout), g_depth, g_normal)


def finite_diff_grads(g: GBuffer, illum: Illumination, camera: Camera, adjoint,
                      step: float = 1e-3, ranges: ParamRanges = ParamRanges(),
                      depth_step: float = 1e-3) -> DirectGradient:
    """Central differences over every optimizable scalar.

    ``step`` is in normalized units for roughness, sh and flash intensity, in
    raw units for normal components; depth uses ``depth_step`` meters.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    adj = np.asarray(adjoint.data if isinstance(adjoint, Image) else adjoint, dtype=np.float64)
    return _contract(_probes(g, illum, camera, step, ranges, depth_step), adj, g, ranges)


def finite_diff_grads_naive(g: GBuffer, illum: Illumination, camera: Camera, adjoint,
                            step: float = 1e-3, ranges: ParamRanges = ParamRanges(),
                            depth_step: float = 1e-3) -> DirectGradient:
    """One scalar at a time; O(pixels) renders, for small rasters only."""
    adj = np.asarray(adjoint.data if isinstance(adjoint, Image) else adjoint, dtype=np.float64)
    depth, normal, rough, mask = _inputs(g)
    sh = np.asarray(illum.sh)

    def f(dep, nrm, rgh, sh_, i_):
        img = render_direct(_gbuffer(dep, nrm, rgh, mask), Illumination(sh_, i_), camera).data
        return float(np.sum(img * adj))

    def cd(make, h):
        return (make(h) - make(-h)) / (2 * h)

    hr = step * ranges.half_width("roughness")
    g_rough = np.zeros_like(rough)
    g_depth = np.zeros_like(depth)
    g_normal = np.zeros_like(normal)
    for y in range(g.height):
        for x in range(g.width):
            def mr(e):
                r2 = rough.copy()
                r2[y, x] += e
                return f(depth, normal, r2, sh, illum.flash_intensity)

            def md(e):
                d2 = depth.copy()
                d2[y, x] += e
                return f(d2, normal, rough, sh, illum.flash_intensity)

            g_rough[y, x] = cd(mr, hr)
            g_depth[y, x] = cd(md, depth_step)
            for j in range(3):
                def mn(e, j=j):
                    n2 = normal.copy()
                    n2[y, x, j] += e
                    return f(depth, n2, rough, sh, illum.flash_intensity)
                g_normal[y, x, j] = cd(mn, step)
    hs = step * ranges.half_width("sh")
    g_sh = np.zeros(27)
    for k in range(27):
        def ms(e, k=k):
            s2 = sh.copy().ravel()
            s2[k] += e
            return f(depth, normal, rough, s2.reshape(3, 9), illum.flash_intensity)
        g_sh[k] = cd(ms, hs)
    hi = step * ranges.half_width("flash_intensity")
    g_i = cd(lambda e: f(depth, normal, rough, sh, illum.flash_intensity + e), hi)
    layout = ParamLayout.for_raster(g.height, g.width)
    return DirectGradient(_to_normalized(g_rough, g_sh, g_i, ranges, layout), g_depth, g_normal)


# --- gradient check ------------------------------------------------------------------

GROUPS = ("roughness", "sh", "flash_intensity", "sigma_t", "alpha", "g")


def unproject(depth, camera: Camera) -> np.ndarray:
    """World positions along pixel-center rays at distance ``depth``."""
    d = np.asarray(depth.data[..., 0] if isinstance(depth, Image) else depth, dtype=np.float64)
    return np.asarray(camera.position) + camera.pixel_rays() * d[..., None]


def shading_context(g: GBuffer, camera: Camera) -> ShadingContext:
    pos = unproject(g.depth, camera)
    w = camera.flash_center() - pos
    dist2 = np.sum(w * w, axis=-1)
    m = g.mask_bool
    return ShadingContext(pos, np.asarray(g.normal.data), np.asarray(g.roughness.data[..., 0]),
                          m, -camera.pixel_rays(), w / np.sqrt(dist2)[..., None],
                          np.where(m, 1.0 / dist2, 0.0))


def sphere_gbuffer(camera: Camera, center=(0.0, 0.0, 0.0), radius=0.25,
                   roughness=0.5) -> GBuffer:
    """Analytic G-buffer of a sphere seen from ``camera``."""
    d = camera.pixel_rays()
    o = np.asarray(camera.position) - np.asarray(center)
    b = _dot(d, o)
    disc = b * b - (_dot(o, o) - radius * radius)
    hit = disc > 0
    t = np.where(hit, -b - np.sqrt(np.where(hit, disc, 0.0)), 0.0)
    hit &= t > 0
    p = o + t[..., None] * d
    n = np.where(hit[..., None], p / radius, (0.0, 0.0, 1.0))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n = n @ camera_to_world(camera)
    rough = np.broadcast_to(np.asarray(roughness, dtype=np.float64),
                            hit.shape).copy()
    return GBuffer(Image(np.where(hit, t, 0.0)[..., None]), Image(n), Image(rough[..., None]),
                   Image(hit[..., None].astype(np.float64)))


def random_scene(rng: np.random.Generator, res: int = 64):
    """A random sphere scene with smoothly varying roughness and bent normals."""
    cam = Camera(resolution=(res, res))
    center = rng.uniform(-0.05, 0.05, 3)
    radius = rng.uniform(0.15, 0.25)
    g = sphere_gbuffer(cam, center, radius)
    yy, xx = np.mgrid[0:res, 0:res] / res
    fx, fy, ph = rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0, 2 * np.pi)
    rough = 0.6 + 0.35 * np.sin(2 * np.pi * fx * xx + ph) * np.cos(2 * np.pi * fy * yy)
    n = np.array(g.normal.data)
    bend = 0.15 * np.stack([np.sin(7 * xx + ph), np.cos(5 * yy), np.zeros_like(xx)], axis=-1)
    n = n + bend * g.mask_bool[..., None]
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    g = replace(g, normal=Image(n), roughness=Image(rough[..., None]))
    sh = rng.uniform(-0.6, 0.6, (3, 9))
    sh[:, 0] = rng.uniform(1.5, 3.0, 3)
    illum = Illumination(sh, rng.uniform(35, 75))
    return g, illum, cam


@dataclass(frozen=True)
class GradcheckResult:
    max_rel_err: dict
    excluded_fraction: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_err.values())


def relative_error(analytic, numeric) -> float:
    """Normwise error max|a - n| / max|n| over one parameter group.

    Entrywise ratios are meaningless near zeros of the gradient, where the
    finite-difference truncation error dominates any small entry.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(n), initial=0.0), np.max(np.abs(a), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def gradcheck_scene(g: GBuffer, illum: Illumination, camera: Camera, rng,
                    step: float = 1e-3, margin: float = 1e-3,
                    ranges: ParamRanges = ParamRanges()):
    """Compare analytic and central-difference gradients on one scene.

    Pixels within ``margin`` of a clamp boundary, or whose clamp active set
    flips under any probe, get a zero adjoint so they drop out of both sides.
    Returns per-group errors and the excluded fraction of masked pixels.
    """
    probes = _probes(g, illum, camera, step, ranges, step)
    _, dist = shading_diagnostics(g, illum, camera)
    excluded = dist < margin
    for p in probes:
        excluded |= p.changed
    adj = rng.standard_normal((g.height, g.width, 3))
    adj[excluded] = 0.0
    adj[~g.mask_bool] = 0.0
    ana = backward_direct(g, illum, camera, adj, ranges).params
    num = _contract(probes, adj, g, ranges).params
    errs = {name: relative_error(ana.values[ana.layout.slices[name]],
                                 num.values[num.layout.slices[name]]) for name in GROUPS}
    m = g.mask_bool
    return errs, float(excluded[m].mean())


def gradcheck(scenes: int = 20, res: int = 64, seed: int = 0, step: float = 1e-3,
              margin: float = 1e-3, tolerance: float = 1e-4) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(GROUPS, 0.0)
    fracs = []
    for _ in range(scenes):
        g, illum, cam = random_scene(rng, res)
        errs, frac = gradcheck_scene(g, illum, cam, rng, step, margin)
        fracs.append(frac)
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    return GradcheckResult(worst, float(np.mean(fracs)), tolerance)
