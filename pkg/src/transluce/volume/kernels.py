"""Numba kernels: ray casting, light transport through the dielectric
boundary and the homogeneous interior."""

import math

import numpy as np
from numba import njit

from ..bsdf import (REFLECT, TRANSMIT, add, dot, eval_bsdf_k, normalize,
                    onb, pdf_bsdf_k, sample_bsdf_k, sample_hg_k, sample_smooth_k, scale,
                    to_world)
from ..rng import stream_key, uniform
from ..shlight import C0, C1, C2, C20, C22, env_lookup

GEO_SPHERE = 0
GEO_MESH = 1

ENV_SH = 0
ENV_IMAGE = 1
ENV_NONE = 2

# integer parameter slots
I_WIDTH, I_HEIGHT, I_SPP, I_MAX_BOUNCES, I_RR_START, I_ENV, I_GEO, I_RTEX, I_JITTER, \
    I_SINGLE, I_VOLUME, I_UNIFORM_PHASE, I_FLASH, I_NEE = range(14)
N_IPARAMS = 14

# float parameter slots
F_ROUGH, F_ETA, F_SIGMA, F_ALBEDO, F_G, F_FLASH_C, F_FLASH_R, F_FLASH_L, F_YAW, \
    F_CAM, F_RIGHT, F_UP, F_FWD, F_TAN, F_ASPECT = (0, 1, 2, 5, 8, 9, 12, 13, 14, 15, 18,
                                                    21, 24, 27, 28)
N_FPARAMS = 29

SMOOTH_ROUGHNESS = 1e-3
RAY_EPS = 1e-7
INF = 1e300


# --- intersection ---------------------------------------------------------------

@njit(cache=True, inline="always")
def hit_sphere(o, d, c, r, tmin):
    oc = (o[0] - c[0], o[1] - c[1], o[2] - c[2])
    b = dot(oc, d)
    cc = dot(oc, oc) - r * r
    disc = b * b - cc
    if disc < 0.0:
        return INF
    sq = math.sqrt(disc)
    t0 = -b - sq
    if t0 > tmin:
        return t0
    t1 = -b + sq
    if t1 > tmin:
        return t1
    return INF


@njit(cache=True)
def hit_mesh(o, d, tmin, tmax, verts, tris, bmin, bmax, meta, stack):
    """Closest triangle hit with a watertight edge-function test.

    Returns (t, triangle, b0, b1, b2); triangle is -1 on a miss."""
    ad0, ad1, ad2 = abs(d[0]), abs(d[1]), abs(d[2])
    kz = 0
    if ad1 > ad0 and ad1 >= ad2:
        kz = 1
    elif ad2 > ad0 and ad2 > ad1:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]
    inv0 = 1.0 / d[0] if d[0] != 0.0 else INF
    inv1 = 1.0 / d[1] if d[1] != 0.0 else INF
    inv2 = 1.0 / d[2] if d[2] != 0.0 else INF

    best = tmax
    best_tri = -1
    rb0 = 0.0
    rb1 = 0.0
    rb2 = 0.0
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        t1 = (bmin[node, 0] - o[0]) * inv0
        t2 = (bmax[node, 0] - o[0]) * inv0
        tn = min(t1, t2)
        tf = max(t1, t2)
        t1 = (bmin[node, 1] - o[1]) * inv1
        t2 = (bmax[node, 1] - o[1]) * inv1
        tn = max(tn, min(t1, t2))
        tf = min(tf, max(t1, t2))
        t1 = (bmin[node, 2] - o[2]) * inv2
        t2 = (bmax[node, 2] - o[2]) * inv2
        tn = max(tn, min(t1, t2))
        tf = min(tf, max(t1, t2))
        if tf < tn * (1.0 - 1e-12) - 1e-12 or tf < tmin or tn > best:
            continue
        count = meta[node, 3]
        if count == 0:
            if sp + 2 <= stack.shape[0]:
                stack[sp] = meta[node, 0]
                stack[sp + 1] = meta[node, 1]
                sp += 2
            continue
        first = meta[node, 2]
        for k in range(first, first + count):
            i0 = tris[k, 0]
            i1 = tris[k, 1]
            i2 = tris[k, 2]
            ax = verts[i0, kx] - o[kx]
            ay = verts[i0, ky] - o[ky]
            az = verts[i0, kz] - o[kz]
            bx = verts[i1, kx] - o[kx]
            by = verts[i1, ky] - o[ky]
            bz = verts[i1, kz] - o[kz]
            cx = verts[i2, kx] - o[kx]
            cy = verts[i2, ky] - o[ky]
            cz = verts[i2, kz] - o[kz]
            ax -= sx * az
            ay -= sy * az
            bx -= sx * bz
            by -= sy * bz
            cx -= sx * cz
            cy -= sy * cz
            u = cx * by - cy * bx
            v = ax * cy - ay * cx
            w = bx * ay - by * ax
            if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
                continue
            det = u + v + w
            if det == 0.0:
                continue
            t = (u * az + v * bz + w * cz) * sz / det
            if t > tmin and t < best:
                best = t
                best_tri = k
                rb0 = u / det
                rb1 = v / det
                rb2 = w / det
    return best, best_tri, rb0, rb1, rb2


@njit(cache=True)
def hit_object(o, d, tmin, geo, sph, verts, tris, vnorm, bmin, bmax, meta, stack):
    """(t, geometric normal, shading normal); both normals face outward."""
    if geo == GEO_SPHERE:
        c = (sph[0], sph[1], sph[2])
        t = hit_sphere(o, d, c, sph[3], tmin)
        if t >= INF:
            return INF, (0.0, 0.0, 1.0), (0.0, 0.0, 1.0)
        p = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
        n, _ = normalize((p[0] - c[0], p[1] - c[1], p[2] - c[2]))
        return t, n, n
    t, k, b0, b1, b2 = hit_mesh(o, d, tmin, INF, verts, tris, bmin, bmax, meta, stack)
    if k < 0:
        return INF, (0.0, 0.0, 1.0), (0.0, 0.0, 1.0)
    i0 = tris[k, 0]
    i1 = tris[k, 1]
    i2 = tris[k, 2]
    e1 = (verts[i1, 0] - verts[i0, 0], verts[i1, 1] - verts[i0, 1], verts[i1, 2] - verts[i0, 2])
    e2 = (verts[i2, 0] - verts[i0, 0], verts[i2, 1] - verts[i0, 1], verts[i2, 2] - verts[i0, 2])
    ng, _ = normalize((e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                       e1[0] * e2[1] - e1[1] * e2[0]))
    ns, ln = normalize((b0 * vnorm[i0, 0] + b1 * vnorm[i1, 0] + b2 * vnorm[i2, 0],
                        b0 * vnorm[i0, 1] + b1 * vnorm[i1, 1] + b2 * vnorm[i2, 1],
                        b0 * vnorm[i0, 2] + b1 * vnorm[i1, 2] + b2 * vnorm[i2, 2]))
    if ln == 0.0:
        ns = ng
    return t, ng, ns


# --- lights and materials --------------------------------------------------------------

@njit(cache=True, inline="always")
def sh_radiance(sh, x, y, z):
    b1 = C1 * y
    b2 = C1 * z
    b3 = C1 * x
    b4 = C2 * x * y
    b5 = C2 * y * z
    b6 = C20 * (3.0 * z * z - 1.0)
    b7 = C2 * x * z
    b8 = C22 * (x * x - y * y)
    out = [0.0, 0.0, 0.0]
    for c in range(3):
        v = (sh[c, 0] * C0 + sh[c, 1] * b1 + sh[c, 2] * b2 + sh[c, 3] * b3 + sh[c, 4] * b4
             + sh[c, 5] * b5 + sh[c, 6] * b6 + sh[c, 7] * b7 + sh[c, 8] * b8)
        out[c] = max(v, 0.0)
    return out[0], out[1], out[2]


@njit(cache=True, inline="always")
def env_radiance(kind, sh, img, yaw, d):
    if kind == ENV_SH:
        return sh_radiance(sh, d[0], d[1], d[2])
    if kind == ENV_IMAGE:
        return env_lookup(img, yaw, d[0], d[1], d[2])
    return 0.0, 0.0, 0.0


@njit(cache=True)
def texture_roughness(p, tex, xf):
    """Spherical-projection lookup in object space; xf holds the object
    center, its 3x3 rotation (row-major) and the tiling factor."""
    qx = p[0] - xf[0]
    qy = p[1] - xf[1]
    qz = p[2] - xf[2]
    # object coordinates = R^T q
    x = xf[3] * qx + xf[6] * qy + xf[9] * qz
    y = xf[4] * qx + xf[7] * qy + xf[10] * qz
    z = xf[5] * qx + xf[8] * qy + xf[11] * qz
    ln = math.sqrt(x * x + y * y + z * z)
    if ln == 0.0:
        return tex[0, 0]
    x /= ln
    y /= ln
    z /= ln
    u = (0.5 + math.atan2(x, -z) / (2.0 * math.pi)) * xf[12]
    v = (math.acos(min(1.0, max(-1.0, y))) / math.pi) * xf[12]
    h, w = tex.shape[0], tex.shape[1]
    fx = (u - math.floor(u)) * w - 0.5
    fy = (v - math.floor(v)) * h - 0.5
    x0 = math.floor(fx)
    y0 = math.floor(fy)
    tx = fx - x0
    ty = fy - y0
    acc = 0.0
    for j in range(2):
        yy = (int(y0) + j) % h
        wy = ty if j == 1 else 1.0 - ty
        for i in range(2):
            xx = (int(x0) + i) % w
            wx = tx if i == 1 else 1.0 - tx
            acc += wx * wy * tex[yy, xx]
    return acc


@njit(cache=True, inline="always")
def roughness_at(p, use_tex, const, tex, xf):
    if use_tex:
        return texture_roughness(p, tex, xf)
    return const


@njit(cache=True, inline="always")
def sphere_cone(p, c, r):
    """(cos_max, pdf) of uniform cone sampling toward a sphere light."""
    w = (c[0] - p[0], c[1] - p[1], c[2] - p[2])
    d2 = dot(w, w)
    s2 = r * r / d2
    if s2 >= 1.0:
        return -1.0, 0.0
    cmax = math.sqrt(1.0 - s2)
    one_minus = s2 / (1.0 + cmax)
    return cmax, 1.0 / (2.0 * math.pi * one_minus)


@njit(cache=True, inline="always")
def camera_ray(fp, px, py, jx, jy, w, h):
    sx = (2.0 * (px + jx) / w - 1.0) * fp[F_TAN] * fp[F_ASPECT]
    sy = (1.0 - 2.0 * (py + jy) / h) * fp[F_TAN]
    d, _ = normalize((fp[F_FWD] + sx * fp[F_RIGHT] + sy * fp[F_UP],
                      fp[F_FWD + 1] + sx * fp[F_RIGHT + 1] + sy * fp[F_UP + 1],
                      fp[F_FWD + 2] + sx * fp[F_RIGHT + 2] + sy * fp[F_UP + 2]))
    return d


# --- path tracing ---------------------------------------------------------------------

@njit(cache=True)
def trace_path(key, o, d, ip, fp, sph, verts, tris, vnorm, bmin, bmax, meta, stack,
               rtex, rxf, env_sh, env_img):
    """One camera path; returns (env rgb, flash rgb)."""
    geo = ip[I_GEO]
    env_kind = ip[I_ENV]
    single = ip[I_SINGLE] != 0
    vol = ip[I_VOLUME] != 0
    flash_on = ip[I_FLASH] != 0
    nee = ip[I_NEE] != 0 and flash_on and not single
    use_tex = ip[I_RTEX] != 0
    eta = fp[F_ETA]
    sig = (fp[F_SIGMA], fp[F_SIGMA + 1], fp[F_SIGMA + 2])
    alb = (fp[F_ALBEDO], fp[F_ALBEDO + 1], fp[F_ALBEDO + 2])
    g = fp[F_G]
    fc = (fp[F_FLASH_C], fp[F_FLASH_C + 1], fp[F_FLASH_C + 2])
    fr = fp[F_FLASH_R]
    fl = fp[F_FLASH_L]
    yaw = fp[F_YAW]
    ssc = (sig[0] * alb[0], sig[1] * alb[1], sig[2] * alb[2])
    scatters = vol and (ssc[0] > 0.0 or ssc[1] > 0.0 or ssc[2] > 0.0)
    absorbs = vol and (sig[0] > 0.0 or sig[1] > 0.0 or sig[2] > 0.0)

    le0 = 0.0
    le1 = 0.0
    le2 = 0.0
    lf0 = 0.0
    lf1 = 0.0
    lf2 = 0.0
    b0 = 1.0
    b1 = 1.0
    b2 = 1.0
    c = 0
    inside = False
    bounces = 0
    nscatter = 0
    prev_nee = False
    prev_pdf = 0.0
    prev_p = o

    while True:
        t_s, ng, ns = hit_object(o, d, 0.0, geo, sph, verts, tris, vnorm, bmin, bmax, meta,
                                 stack)
        if inside:
            if t_s >= INF:
                break  # numerical leak out of a closed surface
            if scatters:
                ch = min(int(uniform(key, c) * 3.0), 2)
                u = uniform(key, c + 1)
                c += 2
                s_ch = sig[ch]
                t = -math.log(1.0 - u) / s_ch if s_ch > 0.0 else INF
                if t < t_s:
                    e0 = math.exp(-sig[0] * t)
                    e1 = math.exp(-sig[1] * t)
                    e2 = math.exp(-sig[2] * t)
                    pdf = (sig[0] * e0 + sig[1] * e1 + sig[2] * e2) / 3.0
                    nscatter += 1
                    if single and nscatter > 1:
                        break
                    b0 *= ssc[0] * e0 / pdf
                    b1 *= ssc[1] * e1 / pdf
                    b2 *= ssc[2] * e2 / pdf
                    o = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
                    u1 = uniform(key, c)
                    u2 = uniform(key, c + 1)
                    c += 2
                    if ip[I_UNIFORM_PHASE] != 0:
                        z = 1.0 - 2.0 * u1
                        rr = math.sqrt(max(0.0, 1.0 - z * z))
                        ph = 2.0 * math.pi * u2
                        d = (rr * math.cos(ph), rr * math.sin(ph), z)
                    else:
                        d, _ = sample_hg_k(g, d, u1, u2)
                    prev_nee = False
                    bounces += 1
                    if bounces >= ip[I_MAX_BOUNCES]:
                        break
                    if not single and bounces >= ip[I_RR_START]:
                        q = min(1.0, max(b0, max(b1, b2)))
                        if q < 1.0:
                            if uniform(key, c) >= q:
                                break
                            c += 1
                            b0 /= q
                            b1 /= q
                            b2 /= q
                    continue
                e0 = math.exp(-sig[0] * t_s)
                e1 = math.exp(-sig[1] * t_s)
                e2 = math.exp(-sig[2] * t_s)
                pr = (e0 + e1 + e2) / 3.0
                b0 *= e0 / pr
                b1 *= e1 / pr
                b2 *= e2 / pr
            elif absorbs:
                b0 *= math.exp(-sig[0] * t_s)
                b1 *= math.exp(-sig[1] * t_s)
                b2 *= math.exp(-sig[2] * t_s)
            if single and nscatter == 0:
                break
        else:
            t_l = hit_sphere(o, d, fc, fr, RAY_EPS) if flash_on else INF
            if t_l < t_s:
                if not single:
                    w = 1.0
                    if prev_nee:
                        _, pl = sphere_cone(prev_p, fc, fr)
                        w = prev_pdf * prev_pdf / (prev_pdf * prev_pdf + pl * pl)
                    lf0 += b0 * fl * w
                    lf1 += b1 * fl * w
                    lf2 += b2 * fl * w
                break
            if t_s >= INF:
                if not single or nscatter == 1:
                    r, gg, bb = env_radiance(env_kind, env_sh, env_img, yaw, d)
                    le0 += b0 * r
                    le1 += b1 * gg
                    le2 += b2 * bb
                break

        # boundary interaction
        p = (o[0] + t_s * d[0], o[1] + t_s * d[1], o[2] + t_s * d[2])
        if eta == 1.0:
            inside = not inside
            side = 1.0 if dot(d, ng) > 0.0 else -1.0
            o = (p[0] + side * RAY_EPS * ng[0], p[1] + side * RAY_EPS * ng[1],
                 p[2] + side * RAY_EPS * ng[2])
            continue
        wo = (-d[0], -d[1], -d[2])
        gco = dot(wo, ng)
        if dot(wo, ns) * gco <= 0.0:
            ns = ng
        rough = roughness_at(p, use_tex, fp[F_ROUGH], rtex, rxf)

        if rough > SMOOTH_ROUGHNESS and nee:
            cmax, pl = sphere_cone(p, fc, fr)
            if pl > 0.0:
                u1 = uniform(key, c)
                u2 = uniform(key, c + 1)
                c += 2
                ct = 1.0 - u1 * (1.0 - cmax)
                st = math.sqrt(max(0.0, 1.0 - ct * ct))
                ph = 2.0 * math.pi * u2
                axis, dist_c = normalize((fc[0] - p[0], fc[1] - p[1], fc[2] - p[2]))
                tt, ss = onb(axis)
                wl = to_world((st * math.cos(ph), st * math.sin(ph), ct), tt, ss, axis)
                if dot(wl, ng) > 0.0:
                    frr, ftt, ok = eval_bsdf_k(wl, wo, ns, rough, eta)
                    f = frr + ftt
                    if ok and f > 0.0:
                        so = (p[0] + RAY_EPS * ng[0], p[1] + RAY_EPS * ng[1],
                              p[2] + RAY_EPS * ng[2])
                        t_light = hit_sphere(so, wl, fc, fr, 0.0)
                        t_occ, _, _ = hit_object(so, wl, 0.0, geo, sph, verts, tris, vnorm,
                                                 bmin, bmax, meta, stack)
                        if t_occ >= t_light:
                            pb = pdf_bsdf_k(wo, wl, ns, rough, eta)
                            wmis = pl * pl / (pl * pl + pb * pb)
                            k = f * abs(dot(wl, ns)) * fl * wmis / pl
                            lf0 += b0 * k
                            lf1 += b1 * k
                            lf2 += b2 * k

        u1 = uniform(key, c)
        u2 = uniform(key, c + 1)
        u3 = uniform(key, c + 2)
        c += 3
        if rough <= SMOOTH_ROUGHNESS:
            wi, weight, event, ok = sample_smooth_k(wo, ns, eta, u1)
            prev_nee = False
        else:
            wi, pdf, weight, event, ok = sample_bsdf_k(wo, ns, rough, eta, u1, u2, u3)
            prev_nee = nee
            prev_pdf = pdf
            prev_p = p
        if not ok:
            break
        gci = dot(wi, ng)
        if (event == REFLECT and gci * gco <= 0.0) or (event == TRANSMIT and gci * gco >= 0.0):
            break
        if single and event == REFLECT:
            break
        b0 *= weight
        b1 *= weight
        b2 *= weight
        if event == TRANSMIT:
            inside = not inside
        side = 1.0 if gci > 0.0 else -1.0
        o = (p[0] + side * RAY_EPS * ng[0], p[1] + side * RAY_EPS * ng[1],
             p[2] + side * RAY_EPS * ng[2])
        d = wi
        bounces += 1
        if bounces >= ip[I_MAX_BOUNCES]:
            break
        if not single and bounces >= ip[I_RR_START]:
            q = min(1.0, max(b0, max(b1, b2)))
            if q < 1.0:
                if uniform(key, c) >= q:
                    break
                c += 1
                b0 /= q
                b1 /= q
                b2 /= q
    return le0, le1, le2, lf0, lf1, lf2


@njit(cache=True, nogil=True)
def render_tile(x0, y0, x1, y1, wx0, wy0, seed, ip, fp, sph, verts, tris, vnorm, bmin, bmax,
                meta, rtex, rxf, env_sh, env_img, out_env, out_flash, out_m2):
    stack = np.empty(128, dtype=np.int64)
    w = ip[I_WIDTH]
    h = ip[I_HEIGHT]
    spp = ip[I_SPP]
    cam = (fp[F_CAM], fp[F_CAM + 1], fp[F_CAM + 2])
    for py in range(y0, y1):
        for px in range(x0, x1):
            pix = py * w + px
            se0 = 0.0
            se1 = 0.0
            se2 = 0.0
            sf0 = 0.0
            sf1 = 0.0
            sf2 = 0.0
            m0 = 0.0
            m1 = 0.0
            m2 = 0.0
            for s in range(spp):
                key = stream_key(seed, pix, s)
                if ip[I_JITTER] != 0:
                    jx = uniform(key, 1 << 20)
                    jy = uniform(key, (1 << 20) + 1)
                else:
                    jx = 0.5
                    jy = 0.5
                d = camera_ray(fp, px, py, jx, jy, w, h)
                e0, e1, e2, f0, f1, f2 = trace_path(key, cam, d, ip, fp, sph, verts, tris,
                                                    vnorm, bmin, bmax, meta, stack, rtex,
                                                    rxf, env_sh, env_img)
                se0 += e0
                se1 += e1
                se2 += e2
                sf0 += f0
                sf1 += f1
                sf2 += f2
                m0 += (e0 + f0) * (e0 + f0)
                m1 += (e1 + f1) * (e1 + f1)
                m2 += (e2 + f2) * (e2 + f2)
            yy = py - wy0
            xx = px - wx0
            inv = 1.0 / spp
            out_env[yy, xx, 0] = se0 * inv
            out_env[yy, xx, 1] = se1 * inv
            out_env[yy, xx, 2] = se2 * inv
            out_flash[yy, xx, 0] = sf0 * inv
            out_flash[yy, xx, 1] = sf1 * inv
            out_flash[yy, xx, 2] = sf2 * inv
            out_m2[yy, xx, 0] = m0 * inv
            out_m2[yy, xx, 1] = m1 * inv
            out_m2[yy, xx, 2] = m2 * inv


@njit(cache=True, nogil=True)
def raycast_tile(x0, y0, x1, y1, ip, fp, sph, verts, tris, vnorm, bmin, bmax, meta, rtex,
                 rxf, depth, normal, rough, mask):
    """Primary-hit G-buffer through pixel centers (world-space normals)."""
    stack = np.empty(128, dtype=np.int64)
    w = ip[I_WIDTH]
    h = ip[I_HEIGHT]
    cam = (fp[F_CAM], fp[F_CAM + 1], fp[F_CAM + 2])
    use_tex = ip[I_RTEX] != 0
    for py in range(y0, y1):
        for px in range(x0, x1):
            d = camera_ray(fp, px, py, 0.5, 0.5, w, h)
            t, ng, ns = hit_object(cam, d, 0.0, ip[I_GEO], sph, verts, tris, vnorm, bmin, bmax,
                                   meta, stack)
            if t >= INF:
                continue
            if dot(ns, d) > 0.0:
                ns = scale(ns, -1.0)
            p = add(cam, scale(d, t))
            mask[py, px] = 1.0
            depth[py, px] = t
            normal[py, px, 0] = ns[0]
            normal[py, px, 1] = ns[1]
            normal[py, px, 2] = ns[2]
            rough[py, px] = roughness_at(p, use_tex, fp[F_ROUGH], rtex, rxf)
