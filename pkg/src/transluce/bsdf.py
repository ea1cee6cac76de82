"""Rough dielectric microfacet BSDF (GGX) and the Henyey-Greenstein phase.

The scalar kernels are numba functions on 3-tuples so the volumetric tracer
uses exactly the same code. ``n`` is the macro-surface normal pointing to the
outside; ``eta`` is the interior index over the exterior one. Directions
point away from the surface. Roughness r maps to the GGX width a = r**2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .core import IOR

INV_PI = 1.0 / math.pi
INV_4PI = 0.25 / math.pi
DEGENERATE_COS = 1e-7

REFLECT = 0
TRANSMIT = 1


# --- small vector helpers (tuples, no allocation) ---------------------------

@njit(cache=True, inline="always")
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, inline="always")
def scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(cache=True, inline="always")
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(cache=True, inline="always")
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(cache=True, inline="always")
def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


@njit(cache=True, inline="always")
def normalize(a):
    n = math.sqrt(dot(a, a))
    if n == 0.0:
        return (0.0, 0.0, 0.0), 0.0
    return scale(a, 1.0 / n), n


@njit(cache=True, inline="always")
def onb(n):
    """Tangent frame (Duff et al. 2017)."""
    sign = 1.0 if n[2] >= 0.0 else -1.0
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    s = (b, sign + n[1] * n[1] * a, -n[1])
    return t, s


@njit(cache=True, inline="always")
def to_world(v, t, s, n):
    return (v[0] * t[0] + v[1] * s[0] + v[2] * n[0],
            v[0] * t[1] + v[1] * s[1] + v[2] * n[1],
            v[0] * t[2] + v[1] * s[2] + v[2] * n[2])


@njit(cache=True, inline="always")
def to_local(v, t, s, n):
    return (dot(v, t), dot(v, s), dot(v, n))


# --- Fresnel, NDF, masking ----------------------------------------------------

@njit(cache=True)
def fresnel_dielectric(cos_i, eta):
    """Unpolarized reflectance; cos_i < 0 means incidence from inside."""
    if eta == 1.0:
        return 0.0
    c = cos_i
    e = eta
    if c < 0.0:
        e = 1.0 / e
        c = -c
    if c > 1.0:
        c = 1.0
    sin2_t = (1.0 - c * c) / (e * e)
    if sin2_t >= 1.0:
        return 1.0
    cos_t = math.sqrt(1.0 - sin2_t)
    rs = (c - e * cos_t) / (c + e * cos_t)
    rp = (e * c - cos_t) / (e * c + cos_t)
    return 0.5 * (rs * rs + rp * rp)


@njit(cache=True)
def ggx_d(cos_h, rough):
    if cos_h <= 0.0:
        return 0.0
    a = rough * rough
    a2 = a * a
    c2 = cos_h * cos_h
    den = a2 * c2 + (1.0 - c2)
    return a2 / (math.pi * den * den)


@njit(cache=True)
def smith_g1(cos_w, cos_wh, rough):
    """Smith GGX masking for a direction with |cos| to the macro normal."""
    if cos_w * cos_wh <= 0.0:
        return 0.0
    a = rough * rough
    a2 = a * a
    c = abs(cos_w)
    return 2.0 * c / (c + math.sqrt(a2 + (1.0 - a2) * c * c))


@njit(cache=True)
def half_vector(wi, wo, n, eta):
    """Generalized half vector oriented toward +n, plus the side etas.

    Returns (h, eta_i, eta_o, ok)."""
    ci = dot(wi, n)
    co = dot(wo, n)
    if ci * co > 0.0:
        h, ln = normalize(add(wi, wo))
        eta_i = 1.0
        eta_o = 1.0
    else:
        eta_i = eta if ci < 0.0 else 1.0
        eta_o = eta if co < 0.0 else 1.0
        h, ln = normalize((-(eta_i * wi[0] + eta_o * wo[0]),
                           -(eta_i * wi[1] + eta_o * wo[1]),
                           -(eta_i * wi[2] + eta_o * wo[2])))
    if ln == 0.0:
        return h, eta_i, eta_o, False
    if dot(h, n) < 0.0:
        h = scale(h, -1.0)
    return h, eta_i, eta_o, True


@njit(cache=True)
def eval_bsdf_k(wi, wo, n, rough, eta):
    """(f_r, f_t, ok); ok is False on degenerate geometry."""
    ci = dot(wi, n)
    co = dot(wo, n)
    if abs(ci) < DEGENERATE_COS or abs(co) < DEGENERATE_COS:
        return 0.0, 0.0, False
    h, eta_i, eta_o, ok = half_vector(wi, wo, n, eta)
    if not ok:
        return 0.0, 0.0, False
    hn = dot(h, n)
    ih = dot(wi, h)
    oh = dot(wo, h)
    d = ggx_d(hn, rough)
    g = smith_g1(ci, ih, rough) * smith_g1(co, oh, rough)
    f = fresnel_dielectric(oh, eta)
    if ci * co > 0.0:
        return f * d * g / (4.0 * abs(ci) * abs(co)), 0.0, True
    if ih * oh >= 0.0:
        return 0.0, 0.0, True
    den = eta_i * ih + eta_o * oh
    if den == 0.0:
        return 0.0, 0.0, False
    ft = (abs(ih) * abs(oh) / (abs(ci) * abs(co))
          * eta_o * eta_o * (1.0 - f) * g * d / (den * den))
    return 0.0, ft, True


@njit(cache=True)
def pdf_bsdf_k(wo, wi, n, rough, eta):
    """Solid-angle density of sampling ``wi`` from ``wo`` (visible normals)."""
    ci = dot(wi, n)
    co = dot(wo, n)
    if abs(ci) < DEGENERATE_COS or abs(co) < DEGENERATE_COS:
        return 0.0
    h, eta_i, eta_o, ok = half_vector(wi, wo, n, eta)
    if not ok:
        return 0.0
    oh = dot(wo, h)
    ih = dot(wi, h)
    # visible normal density for wo's side (h flipped into wo's hemisphere)
    g1 = smith_g1(co, oh, rough)
    d = ggx_d(dot(h, n), rough)
    pvis = g1 * abs(oh) * d / abs(co)
    f = fresnel_dielectric(oh, eta)
    if ci * co > 0.0:
        return f * pvis / (4.0 * abs(oh))
    if ih * oh >= 0.0:
        return 0.0
    den = eta_i * ih + eta_o * oh
    if den == 0.0:
        return 0.0
    return (1.0 - f) * pvis * eta_i * eta_i * abs(ih) / (den * den)


@njit(cache=True)
def sample_vndf(wl, rough, u1, u2):
    """Heitz 2018 visible-normal sampling; ``wl`` is local with wl.z > 0."""
    a = rough * rough
    vh, _ = normalize((a * wl[0], a * wl[1], wl[2]))
    lensq = vh[0] * vh[0] + vh[1] * vh[1]
    if lensq > 0.0:
        inv = 1.0 / math.sqrt(lensq)
        t1 = (-vh[1] * inv, vh[0] * inv, 0.0)
    else:
        t1 = (1.0, 0.0, 0.0)
    t2 = cross(vh, t1)
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    p1 = r * math.cos(phi)
    p2 = r * math.sin(phi)
    s = 0.5 * (1.0 + vh[2])
    p2 = (1.0 - s) * math.sqrt(max(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = math.sqrt(max(0.0, 1.0 - p1 * p1 - p2 * p2))
    nh = (p1 * t1[0] + p2 * t2[0] + p3 * vh[0],
          p1 * t1[1] + p2 * t2[1] + p3 * vh[1],
          p1 * t1[2] + p2 * t2[2] + p3 * vh[2])
    h, _ = normalize((a * nh[0], a * nh[1], max(1e-12, nh[2])))
    return h


@njit(cache=True, inline="always")
def reflect(w, h):
    c = 2.0 * dot(w, h)
    return (c * h[0] - w[0], c * h[1] - w[1], c * h[2] - w[2])


@njit(cache=True)
def refract(w, h, ratio):
    """Refract the direction leaving along -w across facet h (w.h > 0).

    ``ratio`` is eta on w's side over eta on the far side."""
    c = dot(w, h)
    sin2_t = ratio * ratio * (1.0 - c * c)
    if sin2_t >= 1.0:
        return (0.0, 0.0, 0.0), False
    ct = math.sqrt(1.0 - sin2_t)
    k = ratio * c - ct
    return (-ratio * w[0] + k * h[0], -ratio * w[1] + k * h[1], -ratio * w[2] + k * h[2]), True


@njit(cache=True)
def sample_bsdf_k(wo, n, rough, eta, u1, u2, u3):
    """Returns (wi, pdf, weight, event, ok). weight = f |cos wi| / pdf."""
    co = dot(wo, n)
    if abs(co) < DEGENERATE_COS:
        return (0.0, 0.0, 0.0), 0.0, 0.0, REFLECT, False
    if eta == 1.0:
        # index-matched: the interface is invisible, the path goes straight through
        return scale(wo, -1.0), 1.0, 1.0, TRANSMIT, True
    side = 1.0 if co > 0.0 else -1.0
    ns = scale(n, side)
    t, s = onb(ns)
    wl = to_local(wo, t, s, ns)
    for attempt in range(8):
        if attempt > 0:
            # deterministic re-draw from the same uniforms
            u1 = (u1 + 0.6180339887498949) % 1.0
            u2 = (u2 + 0.7548776662466927) % 1.0
        hl = sample_vndf(wl, rough, u1, u2)
        h = to_world(hl, t, s, ns)
        oh = dot(wo, h)
        if oh <= 0.0 or hl[2] <= 0.0:
            continue
        # F from the outside-facing view of the facet
        f = fresnel_dielectric(oh * side, eta)
        if u3 < f:
            wi = reflect(wo, h)
            if dot(wi, n) * co <= 0.0:
                break
            event = REFLECT
        else:
            ratio = 1.0 / eta if side > 0.0 else eta
            wi, ok = refract(wo, h, ratio)
            if not ok or dot(wi, n) * co >= 0.0:
                break
            event = TRANSMIT
        pdf = pdf_bsdf_k(wo, wi, n, rough, eta)
        if pdf <= 0.0:
            break
        fr, ft, ok = eval_bsdf_k(wi, wo, n, rough, eta)
        if not ok:
            break
        fval = fr if event == REFLECT else ft
        return wi, pdf, fval * abs(dot(wi, n)) / pdf, event, True
    return (0.0, 0.0, 0.0), 0.0, 0.0, REFLECT, False


@njit(cache=True)
def sample_smooth_k(wo, n, eta, u):
    """Delta dielectric: (wi, weight, event, ok); weight includes the
    radiance eta^2 scaling on transmission."""
    co = dot(wo, n)
    f = fresnel_dielectric(co, eta)
    ns = n if co > 0.0 else scale(n, -1.0)
    if u < f:
        return reflect(wo, ns), 1.0, REFLECT, True
    ratio = 1.0 / eta if co > 0.0 else eta
    wi, ok = refract(wo, ns, ratio)
    if not ok:
        return reflect(wo, ns), 1.0, REFLECT, True
    # eta_o^2 / eta_i^2 with o = wo's side
    return wi, ratio * ratio, TRANSMIT, True


# --- Henyey-Greenstein ---------------------------------------------------------

@njit(cache=True)
def hg_phase_k(cos_theta, g):
    den = 1.0 + g * g - 2.0 * g * cos_theta
    return INV_4PI * (1.0 - g * g) / (den * math.sqrt(den))


@njit(cache=True)
def hg_cos_k(g, u):
    if abs(g) < 1e-3:
        return 1.0 - 2.0 * u
    s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    c = (1.0 + g * g - s * s) / (2.0 * g)
    return min(1.0, max(-1.0, c))


@njit(cache=True)
def sample_hg_k(g, fwd, u1, u2):
    """Direction scattered from travel direction ``fwd``; returns (dir, pdf)."""
    c = hg_cos_k(g, u1)
    st = math.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * math.pi * u2
    t, s = onb(fwd)
    d = to_world((st * math.cos(phi), st * math.sin(phi), c), t, s, fwd)
    return d, hg_phase_k(c, g)


@njit(cache=True)
def _sample_hg_many(g, fwd, u, out_dir, out_pdf):
    for k in range(out_pdf.shape[0]):
        d, p = sample_hg_k(g, fwd, u[2 * k], u[2 * k + 1])
        out_dir[k, 0] = d[0]
        out_dir[k, 1] = d[1]
        out_dir[k, 2] = d[2]
        out_pdf[k] = p


@njit(cache=True)
def _sample_bsdf_many(wo, n, rough, eta, u, out_dir, out_pdf, out_w, out_ev, out_ok):
    for k in range(out_pdf.shape[0]):
        wi, pdf, w, ev, ok = sample_bsdf_k(wo, n, rough, eta, u[3 * k], u[3 * k + 1], u[3 * k + 2])
        out_dir[k, 0] = wi[0]
        out_dir[k, 1] = wi[1]
        out_dir[k, 2] = wi[2]
        out_pdf[k] = pdf
        out_w[k] = w
        out_ev[k] = ev
        out_ok[k] = ok


@njit(cache=True)
def _eval_bsdf_many(wi, wo, n, rough, eta, fr, ft):
    for k in range(wi.shape[0]):
        a, b, _ = eval_bsdf_k((wi[k, 0], wi[k, 1], wi[k, 2]), (wo[k, 0], wo[k, 1], wo[k, 2]),
                              (n[k, 0], n[k, 1], n[k, 2]), rough[k], eta)
        fr[k] = a
        ft[k] = b


@njit(cache=True)
def _pdf_bsdf_many(wo, wi, n, rough, eta, out):
    for k in range(wi.shape[0]):
        out[k] = pdf_bsdf_k((wo[k, 0], wo[k, 1], wo[k, 2]), (wi[k, 0], wi[k, 1], wi[k, 2]),
                            (n[k, 0], n[k, 1], n[k, 2]), rough[k], eta)


# --- Python-facing API ---------------------------------------------------------

class Event(Enum):
    Reflect = REFLECT
    Transmit = TRANSMIT


@dataclass(frozen=True)
class BsdfSample:
    direction: np.ndarray
    pdf: float
    weight: float
    event: Event


@dataclass(frozen=True)
class PhaseSample:
    direction: np.ndarray
    pdf: float


def _t(v):
    return tuple(float(x) for x in np.asarray(v, dtype=np.float64).ravel()[:3])


def fresnel(cos_i, eta=IOR):
    return np.vectorize(fresnel_dielectric, otypes=[float])(cos_i, eta)


def ggx_ndf(cos_h, rough):
    return np.vectorize(ggx_d, otypes=[float])(cos_h, rough)


def smith_g(wi, wo, h, rough, n=(0.0, 0.0, 1.0)):
    wi, wo, h, n = _t(wi), _t(wo), _t(h), _t(n)
    return (smith_g1(dot(wi, n), dot(wi, h), rough)
            * smith_g1(dot(wo, n), dot(wo, h), rough))


def eval_bsdf(wi, wo, n, rough, eta=IOR):
    """(f_r, f_t) per steradian for single vectors or (N, 3) batches."""
    wi = np.asarray(wi, dtype=np.float64)
    if wi.ndim == 1:
        fr, ft, _ = eval_bsdf_k(_t(wi), _t(wo), _t(n), float(rough), float(eta))
        return fr, ft
    m = wi.shape[0]
    wo = np.broadcast_to(np.asarray(wo, dtype=np.float64), (m, 3)).copy()
    n = np.broadcast_to(np.asarray(n, dtype=np.float64), (m, 3)).copy()
    r = np.broadcast_to(np.asarray(rough, dtype=np.float64), (m,)).copy()
    fr = np.empty(m)
    ft = np.empty(m)
    _eval_bsdf_many(np.ascontiguousarray(wi), wo, n, r, float(eta), fr, ft)
    return fr, ft


def pdf_bsdf(wo, wi, n, rough, eta=IOR):
    wi = np.asarray(wi, dtype=np.float64)
    if wi.ndim == 1:
        return pdf_bsdf_k(_t(wo), _t(wi), _t(n), float(rough), float(eta))
    m = wi.shape[0]
    wo = np.broadcast_to(np.asarray(wo, dtype=np.float64), (m, 3)).copy()
    n = np.broadcast_to(np.asarray(n, dtype=np.float64), (m, 3)).copy()
    r = np.broadcast_to(np.asarray(rough, dtype=np.float64), (m,)).copy()
    out = np.empty(m)
    _pdf_bsdf_many(wo, np.ascontiguousarray(wi), n, r, float(eta), out)
    return out


def sample_bsdf(wo, n, rough, eta, rng):
    """One BSDF sample, or None when eight half-vector draws all fail."""
    u = rng.random(3)
    wi, pdf, w, ev, ok = sample_bsdf_k(_t(wo), _t(n), float(rough), float(eta), u[0], u[1], u[2])
    if not ok:
        return None
    return BsdfSample(np.array(wi), pdf, w, Event(ev))


def sample_bsdf_batch(wo, n, rough, eta, u):
    """Vectorized sampler driven by 3*N uniforms.

    Returns (directions, pdf, weight, event, ok) arrays."""
    m = len(u) // 3
    d = np.empty((m, 3))
    pdf = np.empty(m)
    w = np.empty(m)
    ev = np.empty(m, dtype=np.int64)
    ok = np.empty(m, dtype=np.bool_)
    _sample_bsdf_many(_t(wo), _t(n), float(rough), float(eta), np.ascontiguousarray(u),
                      d, pdf, w, ev, ok)
    return d, pdf, w, ev, ok


def hg_phase(cos_theta, g):
    c = np.asarray(cos_theta, dtype=np.float64)
    den = 1.0 + g * g - 2.0 * g * c
    return INV_4PI * (1.0 - g * g) / (den * np.sqrt(den))


def sample_hg(g, wo, rng):
    """Scatter from travel direction ``wo``; E[cos] with ``wo`` equals g."""
    u = rng.random(2)
    d, p = sample_hg_k(float(g), _t(wo), u[0], u[1])
    return PhaseSample(np.array(d), p)


def sample_hg_batch(g, wo, u):
    m = len(u) // 2
    d = np.empty((m, 3))
    p = np.empty(m)
    _sample_hg_many(float(g), _t(wo), np.ascontiguousarray(u), d, p)
    return d, p
