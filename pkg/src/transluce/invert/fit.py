"""Analysis-by-synthesis fits: the direct renderer by its analytic adjoint,
the volumetric medium by common-random-number finite differences."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..core import (IOR, Camera, GBuffer, Illumination, Image, ParamLayout, ParamRanges,
                    ParamVector, SceneParams, SssParams, denormalize_params,
                    denormalize_value, normalize_params, normalize_value)
from ..direct import backward_direct, render_direct
from ..errors import DivergenceDetected, MaskEmpty, ShapeMismatch, StepTooSmall
from ..volume.tracer import FlashLight, TraceConfig, raycast_gbuffer, trace_components
from .losses import Estimate, mae_report
from .optim import Adam, FitReport, OptimConfig

# Desk-scale defaults. The network-training learning rate is far too small
# for a few thousand steps of direct parameter descent, and the heavier
# momentum copes with the narrow valley between sh and the flash intensity.
DIRECT_CONFIG = OptimConfig(lr=0.01, beta1=0.9, steps=3000)
SSS_CONFIG = OptimConfig(lr=0.05, steps=100)


class _Watchdog:
    def __init__(self, cfg: OptimConfig, initial: float):
        self.limit = cfg.divergence_factor * initial
        self.patience = cfg.divergence_patience
        self.run = 0

    def tripped(self, loss: float) -> bool:
        self.run = self.run + 1 if (loss > self.limit or not np.isfinite(loss)) else 0
        return self.run >= self.patience


def _init_vector(layout: ParamLayout, cfg: OptimConfig, init) -> np.ndarray:
    if init is not None:
        if isinstance(init, ParamVector):
            if init.layout != layout:
                raise ShapeMismatch("init vector layout does not match the problem")
            return np.array(init.values)
        v = np.asarray(init, dtype=np.float64).ravel()
        if v.size != layout.size:
            raise ShapeMismatch(f"init of size {v.size} for {layout.size} parameters")
        return v.copy()
    if cfg.init == "provided":
        raise ValueError("init='provided' needs an init vector")
    if cfg.init == "random":
        return np.random.default_rng(cfg.seed).uniform(-1.0, 1.0, layout.size)
    return np.zeros(layout.size)


# --- direct fit -------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirectObservation:
    """A flash image with known geometry. ``gbuffer`` supplies depth,
    normals and the mask; its roughness raster is ignored."""

    flash: Image
    gbuffer: GBuffer
    camera: Camera


def direct_problem_layout(obs: DirectObservation) -> ParamLayout:
    return ParamLayout.for_raster(obs.gbuffer.height, obs.gbuffer.width)


def fit_direct(obs: DirectObservation, init=None, cfg: OptimConfig = DIRECT_CONFIG,
               ranges: ParamRanges = ParamRanges(), gt: SceneParams | None = None,
               refine_normals: bool = False, frozen_fraction: float = 0.1,
               tied_fraction: float = 0.5, threads=None) -> FitReport:
    """Recover the roughness raster, sh and flash intensity.

    Adam runs in normalized coordinates and every step is clamped back to
    [-1, 1]. The medium groups of the vector are carried along untouched.
    ``init`` may be a normalized ParamVector, a flat array or SceneParams.

    Roughness is released in stages. During the first ``frozen_fraction``
    of the steps it stays at its initial value while sh and i adapt. Until
    ``tied_fraction`` all mask pixels share one update (the mean of their
    gradients), and only then does each pixel move on its own. Releasing
    it early lets a dark initial render drag roughness into a wrong basin,
    and per-pixel freedom can absorb errors in sh and i.
    """
    g0 = obs.gbuffer
    if (obs.flash.height, obs.flash.width) != (g0.height, g0.width):
        raise ShapeMismatch("observed image and gbuffer differ in size")
    if (obs.camera.height, obs.camera.width) != (g0.height, g0.width):
        raise ShapeMismatch("camera resolution differs from the observation")
    m = g0.mask_bool
    if not m.any():
        raise MaskEmpty("observation mask is empty")
    layout = direct_problem_layout(obs)
    if isinstance(init, SceneParams):
        init = normalize_params(init, ranges)
    x = _init_vector(layout, cfg, init)
    sl = layout.slices
    free = np.zeros(layout.size, dtype=bool)
    free[sl["roughness"]] = m.ravel()
    free[sl["sh"]] = True
    free[sl["flash_intensity"]] = True
    target = np.asarray(obs.flash.data, dtype=np.float64)
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(target))))
    denom = 3.0 * m.sum()
    normal = np.array(g0.normal.data, dtype=np.float64)
    opt = Adam(layout.size, cfg.beta1, cfg.beta2, cfg.epsilon)
    nopt = Adam(normal.size, cfg.beta1, cfg.beta2, cfg.epsilon) if refine_normals else None
    t0 = time.perf_counter()
    renders = 0

    def scene_at(vec, nrm):
        p = denormalize_params(ParamVector(vec, layout), ranges)
        rough = np.where(m, p.roughness, 1.0)[..., None]
        g = GBuffer(g0.depth, Image(nrm), Image(rough), g0.mask, check=False)
        return g, Illumination(p.sh, max(p.flash_intensity, 0.0))

    def evaluate(vec, nrm, need_grad):
        nonlocal renders
        g, illum = scene_at(vec, nrm)
        pred = np.asarray(render_direct(g, illum, obs.camera, threads).data)
        renders += 1
        r = pred - target
        loss = float(np.abs(r[m]).sum() / denom)
        if not need_grad:
            return loss, None, None
        # residuals at roundoff level take the zero subgradient, so an exact
        # reconstruction is a fixed point instead of a full-size Adam step
        adj = np.where(m[..., None] & (np.abs(r) > tiny), np.sign(r), 0.0) / denom
        grad = backward_direct(g, illum, obs.camera, adj, ranges, threads)
        return loss, np.where(free, grad.params.values, 0.0), grad.normal

    loss, grad, gn = evaluate(x, normal, cfg.steps > 0)
    losses = [loss]
    best, best_x, best_n, best_k = loss, x.copy(), normal.copy(), 0
    dog = _Watchdog(cfg, loss)
    diverged = False
    frozen_steps = int(round(frozen_fraction * cfg.steps))
    tied_steps = int(round(tied_fraction * cfg.steps))
    rsl = sl["roughness"]
    mflat = m.ravel()
    for k in range(cfg.steps):
        lr = cfg.lr_at(k)
        gr = grad[rsl]
        if k < frozen_steps:
            gr[:] = 0.0
        elif k < tied_steps:
            gr[mflat] = gr[mflat].mean()
        x = np.clip(opt.step(x, grad, lr), -1.0, 1.0)
        if nopt is not None:
            nn = nopt.step(normal.ravel(), np.where(m[..., None], gn, 0.0).ravel(), lr)
            nn = nn.reshape(normal.shape)
            nn /= np.linalg.norm(nn, axis=-1, keepdims=True)
            normal = np.where(m[..., None], nn, normal)
        loss, grad, gn = evaluate(x, normal, k + 1 < cfg.steps)
        losses.append(loss)
        if loss < best:
            best, best_x, best_n, best_k = loss, x.copy(), normal.copy(), k + 1
        if dog.tripped(loss):
            diverged = True
            break
    best_vec = ParamVector(best_x, layout)
    phys = denormalize_params(best_vec, ranges)
    report = FitReport(
        losses=losses, params=best_vec,
        physical={"roughness_mean": float(np.mean(phys.roughness[m])), "sh": phys.sh,
                  "flash_intensity": phys.flash_intensity},
        best_loss=best, best_step=best_k, wall_clock=time.perf_counter() - t0,
        renders=renders, diverged=diverged)
    report.extra["roughness"] = phys.roughness
    if refine_normals:
        report.extra["normal"] = best_n
    if gt is not None:
        rough_gt = np.broadcast_to(np.asarray(gt.roughness, dtype=np.float64), m.shape)
        est = Estimate(roughness=phys.roughness[..., None], sh=phys.sh,
                       flash_intensity=phys.flash_intensity, mask=g0.mask)
        ref = Estimate(roughness=rough_gt[..., None], sh=gt.sh,
                       flash_intensity=gt.flash_intensity, mask=g0.mask)
        report.mae = mae_report([est], [ref], ranges).to_dict()
    if diverged:
        raise DivergenceDetected(f"loss above {cfg.divergence_factor}x the initial value for "
                                 f"{cfg.divergence_patience} steps", report)
    return report


def synthetic_direct_scene(seed: int, res: int = 64, rough_range=(0.2, 0.6)):
    """A sphere with constant roughness under random SH light and flash,
    rendered by the direct renderer: (observation, ground truth).

    The default roughness band avoids two regimes where a flash-only fit
    from the midpoint is ill-posed. Above about 0.6 the broad flash lobe is
    nearly a low-order SH function of the normal, so the image barely
    constrains the intensity. Below about 0.2 the highlight covers a few
    pixels and the loss has a barrier between the midpoint and the truth.
    """
    from ..direct import sphere_gbuffer
    from ..synth.assets import random_sh
    rng = np.random.default_rng(seed)
    rough = float(rng.uniform(*rough_range))
    sh = random_sh(rng)
    i = float(rng.uniform(35.0, 75.0))
    cam = Camera(resolution=(res, res))
    g = sphere_gbuffer(cam, (0.0, 0.0, 0.0), 0.25, rough)
    img = render_direct(g, Illumination(sh, i), cam)
    gt = SceneParams(np.full((res, res), rough), sh, i, SssParams((0, 0, 0), (0.5,) * 3, 0.0))
    return DirectObservation(img, g, cam), gt


# --- volumetric fit -----------------------------------------------------------------------------

SSS_LAYOUT = ParamLayout((("flash_intensity", ()), ("sigma_t", (3,)), ("alpha", (3,)),
                          ("g", ())))
MIN_FD_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class SssObservation:
    """A flash/no-flash pair. The no-flash shot may use its own (shaken) camera."""

    flash: Image
    noflash: Image
    camera: Camera
    noflash_camera: Camera | None = None


def downsample(image: Image, width: int, height: int) -> np.ndarray:
    a = np.asarray(image.data, dtype=np.float64)
    h, w = a.shape[:2]
    if (h, w) == (height, width):
        return a
    if h % height or w % width:
        raise ShapeMismatch(f"cannot box-filter {w}x{h} down to {width}x{height}")
    fy, fx = h // height, w // width
    return a.reshape(height, fy, width, fx, a.shape[2]).mean(axis=(1, 3))


def sss_vector(sss: SssParams, intensity: float, ranges: ParamRanges = ParamRanges()):
    parts = [np.atleast_1d(normalize_value("flash_intensity", intensity, ranges)),
             normalize_value("sigma_t", sss.sigma_t, ranges),
             normalize_value("alpha", sss.alpha, ranges),
             np.atleast_1d(normalize_value("g", sss.g, ranges))]
    return ParamVector(np.clip(np.concatenate(parts), -1.0, 1.0), SSS_LAYOUT)


def sss_physical(x, ranges: ParamRanges = ParamRanges()):
    v = ParamVector(x, SSS_LAYOUT)
    sss = SssParams(tuple(denormalize_value("sigma_t", v.group("sigma_t"), ranges)),
                    tuple(denormalize_value("alpha", v.group("alpha"), ranges)),
                    float(denormalize_value("g", v.group("g"), ranges)))
    return sss, float(denormalize_value("flash_intensity", v.group("flash_intensity"), ranges))


class SssObjective:
    """L1 loss of coarse fixed-seed renders against the observed pair.

    Every render uses the same seed, so nearby parameter settings see the
    same random numbers and their differences are low-variance.
    """

    def __init__(self, obs: SssObservation, geometry, roughness, env, coarse_res: int = 64,
                 spp: int = 256, seed: int = 0, two_shot: bool = True,
                 ranges: ParamRanges = ParamRanges(), threads=None, eta: float = IOR,
                 max_bounces: int = 64):
        self.geometry, self.roughness, self.env = geometry, roughness, env
        self.ranges, self.eta, self.two_shot = ranges, eta, two_shot
        res = (coarse_res, coarse_res)
        self.cam = replace(obs.camera, resolution=res)
        self.ncam = replace(obs.noflash_camera or obs.camera, resolution=res)
        self.cfg = TraceConfig(spp=spp, seed=seed, threads=threads, max_bounces=max_bounces)
        self.obs_f = downsample(obs.flash, coarse_res, coarse_res)
        self.obs_n = downsample(obs.noflash, coarse_res, coarse_res)
        self.mask_f = raycast_gbuffer(geometry, roughness, self.cam, threads).mask_bool
        self.mask_n = raycast_gbuffer(geometry, roughness, self.ncam, threads).mask_bool
        if not (self.mask_f.any() and self.mask_n.any()):
            raise MaskEmpty("the object is not visible at the coarse resolution")
        self.renders = 0

    def render(self, x):
        """(flash env part, flash part, no-flash image) at normalized ``x``."""
        sss, i = sss_physical(x, self.ranges)
        fl = FlashLight.for_camera(self.cam, i)
        r = trace_components(self.geometry, self.roughness, sss, self.env, fl, self.cam,
                             self.cfg, self.eta)
        self.renders += 1
        noflash = None
        if self.two_shot:
            noflash = trace_components(self.geometry, self.roughness, sss, self.env, None,
                                       self.ncam, self.cfg, self.eta).env
            self.renders += 1
        return r.env, r.flash, noflash

    def channel_losses(self, parts) -> np.ndarray:
        """Per-channel contributions; their sum is the loss."""
        env, flash, noflash = parts
        out = np.abs(env + flash - self.obs_f)[self.mask_f].sum(0) / (3.0 * self.mask_f.sum())
        if self.two_shot:
            out = out + (np.abs(noflash - self.obs_n)[self.mask_n].sum(0)
                         / (3.0 * self.mask_n.sum()))
        return out

    def loss(self, x) -> float:
        return float(self.channel_losses(self.render(x)).sum())

    def gradient(self, x, base, fd_step: float) -> np.ndarray:
        """Gradient in normalized coordinates.

        The flash term is linear in intensity, so that entry is exact. For
        the medium, channel c of every image depends only on sigma_t[c],
        alpha[c] and g; one central difference that moves all three
        channels of a group therefore yields all three partial derivatives.
        """
        if fd_step < MIN_FD_STEP:
            raise StepTooSmall(f"fd_step {fd_step} below {MIN_FD_STEP}")
        sl = SSS_LAYOUT.slices
        grad = np.zeros(SSS_LAYOUT.size)
        env, flash, _ = base
        _, i = sss_physical(x, self.ranges)
        r = np.sign(env + flash - self.obs_f)
        di = (r * flash)[self.mask_f].sum() / (3.0 * self.mask_f.sum()) / max(i, 1e-12)
        grad[sl["flash_intensity"]] = di * self.ranges.half_width("flash_intensity")
        for name in ("sigma_t", "alpha", "g"):
            s = sl[name]
            xp, xm = x.copy(), x.copy()
            xp[s] = np.minimum(x[s] + fd_step, 1.0)
            xm[s] = np.maximum(x[s] - fd_step, -1.0)
            lp = self.channel_losses(self.render(xp))
            lm = self.channel_losses(self.render(xm))
            if name == "g":
                grad[s] = (lp - lm).sum() / (xp[s] - xm[s])
            else:
                grad[s] = (lp - lm) / (xp[s] - xm[s])
        return grad


def fit_sss(obs: SssObservation, geometry, roughness, env, init=None,
            cfg: OptimConfig = SSS_CONFIG, fd_step: float = 0.02, coarse_res: int = 64,
            spp: int = 256, seed: int = 0, two_shot: bool = True,
            ranges: ParamRanges = ParamRanges(), gt: SssParams | None = None,
            gt_intensity: float | None = None, threads=None, eta: float = IOR) -> FitReport:
    """Recover sigma_t, alpha, g and the flash intensity with geometry,
    roughness and lighting held fixed. ``two_shot=False`` drops the
    no-flash term from the loss."""
    if fd_step < MIN_FD_STEP:
        raise StepTooSmall(f"fd_step {fd_step} below {MIN_FD_STEP}")
    if isinstance(init, tuple) and len(init) == 2 and isinstance(init[0], SssParams):
        init = sss_vector(init[0], init[1], ranges)
    obj = SssObjective(obs, geometry, roughness, env, coarse_res, spp, seed, two_shot, ranges,
                       threads, eta)
    x = _init_vector(SSS_LAYOUT, cfg, init)
    opt = Adam(SSS_LAYOUT.size, cfg.beta1, cfg.beta2, cfg.epsilon)
    t0 = time.perf_counter()
    base = obj.render(x)
    loss = float(obj.channel_losses(base).sum())
    losses = [loss]
    best, best_x, best_k = loss, x.copy(), 0
    dog = _Watchdog(cfg, loss)
    diverged = False
    for k in range(cfg.steps):
        grad = obj.gradient(x, base, fd_step)
        x = np.clip(opt.step(x, grad, cfg.lr_at(k)), -1.0, 1.0)
        base = obj.render(x)
        loss = float(obj.channel_losses(base).sum())
        losses.append(loss)
        if loss < best:
            best, best_x, best_k = loss, x.copy(), k + 1
        if dog.tripped(loss):
            diverged = True
            break
    sss, i = sss_physical(best_x, ranges)
    report = FitReport(
        losses=losses, params=ParamVector(best_x, SSS_LAYOUT),
        physical={"sss": sss.to_dict(), "flash_intensity": i}, best_loss=best, best_step=best_k,
        wall_clock=time.perf_counter() - t0, renders=obj.renders, diverged=diverged,
        extra={"two_shot": two_shot, "coarse_res": coarse_res, "spp": spp, "fd_step": fd_step,
               "final_iterate": ParamVector(x, SSS_LAYOUT).values})
    if gt is not None:
        est = Estimate(sss=sss, flash_intensity=i if gt_intensity is not None else None)
        ref = Estimate(sss=gt, flash_intensity=gt_intensity)
        report.mae = mae_report([est], [ref], ranges).to_dict()
    if diverged:
        raise DivergenceDetected(f"loss above {cfg.divergence_factor}x the initial value for "
                                 f"{cfg.divergence_patience} steps", report)
    return report
