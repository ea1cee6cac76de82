"""Deterministic single-scattering oracle for a smooth dielectric sphere."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bsdf import fresnel, hg_phase
from ..core import IOR, Camera, Image, SssParams
from ..shlight import basis_unchecked, _quad
from .geometry import Sphere


@dataclass(frozen=True)
class DirectionalLobe:
    """Smooth directional light L(w) = radiance * ((1 + w.d) / 2)^2.

    It is an exact order-2 SH function, so the tracer can render it through
    its SH environment path with no projection error.
    """

    direction: tuple = (0.0, 1.0, 0.0)
    radiance: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))

    def __call__(self, w) -> np.ndarray:
        c = np.asarray(w) @ np.asarray(self.direction)
        return self.radiance * ((1.0 + c) / 2.0) ** 2

    def sh(self) -> np.ndarray:
        d, wq = _quad()
        row = (basis_unchecked(d).T * wq) @ self(d)
        return np.tile(row, (3, 1))


def _frame(a):
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    helper = np.where(np.abs(a[..., :1]) > 0.9, [0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    t = np.cross(a, helper)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return t, np.cross(a, t)


def single_scatter_reference(geom: Sphere, sss: SssParams, light: DirectionalLobe,
                             camera: Camera, eta: float = IOR, n_dist: int = 64,
                             n_mu: int = 16, n_phi: int = 32, window=None) -> Image:
    """Radiance of paths that refract in, scatter once and refract out.

    Nested quadrature through every pixel center: Gauss-Legendre along the
    refracted camera ray, then a direction rule about the radial axis at each
    point, split at the total-internal-reflection cone (``n_mu`` nodes per
    side, ``n_phi`` uniform azimuths). Internal reflections are not part
    of this term. ``window`` = (x0, y0, x1, y1) restricts the work to a
    pixel block; the result then has the block's shape.
    """
    if not isinstance(geom, Sphere):
        raise TypeError("the single-scatter oracle handles spheres only")
    c = np.asarray(geom.center)
    rad = geom.radius
    sig = np.asarray(sss.sigma_t, dtype=np.float64)
    sig_s = sig * np.asarray(sss.alpha, dtype=np.float64)
    rays = camera.pixel_rays()
    if window is not None:
        x0, y0, x1, y1 = window
        rays = rays[y0:y1, x0:x1]
    h, w = rays.shape[:2]
    out = np.zeros((h, w, 3))

    d = rays.reshape(-1, 3)
    o = np.asarray(camera.position) - c
    b = d @ o
    disc = b * b - (o @ o - rad * rad)
    hit = disc > 0
    t0 = -b - np.sqrt(np.where(hit, disc, 0.0))
    hit &= t0 > 0
    if not hit.any() or not np.any(sig_s > 0):
        return Image(out)
    d = d[hit]
    p0 = o + t0[hit, None] * d
    n0 = p0 / rad
    ci = -np.sum(d * n0, axis=1)
    f0 = fresnel(ci, eta)
    sin2 = (1.0 - ci * ci) / eta ** 2
    ct = np.sqrt(1.0 - sin2)
    tdir = d / eta + (ci / eta - ct)[:, None] * n0
    tdir /= np.linalg.norm(tdir, axis=1, keepdims=True)
    chord = -2.0 * np.sum(p0 * tdir, axis=1)

    xs, ws = np.polynomial.legendre.leggauss(n_dist)
    tq, wq = np.polynomial.legendre.leggauss(n_mu)
    tq = 0.5 * (tq + 1.0)
    wq = 0.5 * wq
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    cphi, sphi = np.cos(phi), np.sin(phi)
    wphi = 2 * np.pi / n_phi

    acc = np.zeros((d.shape[0], 3))
    for x_gl, w_gl in zip(xs, ws):
        s = 0.5 * chord * (x_gl + 1.0)
        ws_len = 0.5 * chord * w_gl
        x = p0 + s[:, None] * tdir
        r = np.linalg.norm(x, axis=1)
        # Directions are measured from the radial axis through x. A ray leaves
        # the sphere unless |x| sin(psi) > R/eta, so the escaping set is
        # |cos psi| > mu_c. Each side is integrated with mu = mu_c + (1-mu_c) t^2,
        # which removes the square-root kink of the Fresnel term at the
        # critical angle.
        axis = x / np.maximum(r, 1e-300)[:, None]
        rho = rad / (eta * np.maximum(r, 1e-300))
        mu_c = np.sqrt(np.maximum(0.0, 1.0 - rho * rho))
        span = 1.0 - mu_c
        mu_pos = mu_c[:, None] + span[:, None] * tq[None, :] ** 2
        jac = 2.0 * span[:, None] * tq[None, :] * wq[None, :]
        mu = np.concatenate([mu_pos, -mu_pos], axis=1)
        wmu = np.concatenate([jac, jac], axis=1)
        e1, e2 = _frame(axis)
        st = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
        dirs = (mu[..., None, None] * axis[:, None, None, :]
                + (st[..., None] * cphi)[..., None] * e1[:, None, None, :]
                + (st[..., None] * sphi)[..., None] * e2[:, None, None, :])
        phase = hg_phase(np.einsum("pabj,pj->pab", dirs, tdir), sss.g)
        bx = (mu * r[:, None])[..., None]
        d2 = -bx + np.sqrt(np.maximum(bx * bx - (r * r - rad * rad)[:, None, None], 0.0))
        q = x[:, None, None, :] + d2[..., None] * dirs
        nq = q / rad
        cout = np.sum(dirs * nq, axis=-1)
        fq = fresnel(-cout, eta)
        s2 = eta ** 2 * (1.0 - cout ** 2)
        ok = s2 < 1.0
        cto = np.sqrt(np.where(ok, 1.0 - s2, 0.0))
        wout = eta * dirs + (cto - eta * cout)[..., None] * nq
        wout /= np.linalg.norm(wout, axis=-1, keepdims=True)
        lin = light(wout)
        base = np.where(ok, (1.0 - fq) * eta ** 2 * lin, 0.0) * phase * (wmu[..., None] * wphi)
        for k in range(3):
            tr = np.exp(-sig[k] * (s[:, None, None] + d2))
            acc[:, k] += ws_len * sig_s[k] * np.sum(base * tr, axis=(1, 2))
    vals = ((1.0 - f0) / eta ** 2)[:, None] * acc
    flat = out.reshape(-1, 3)
    flat[np.flatnonzero(hit)] = vals
    return Image(out)
