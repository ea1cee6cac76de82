"""Command-line front end.

Exit codes: 0 success, 1 gradient check failed, 2 input error, 3 runtime
error or divergence, 4 partial failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import direct as dr
from ._parallel import THREADS_ENV
from .core import GBuffer, Illumination, Image, SssParams, lerp_sss
from .errors import DivergenceDetected, TransluceError
from .invert import (DIRECT_CONFIG, SSS_CONFIG, DirectObservation, SssObservation, fit_direct,
                     fit_sss)
from .invert.fit import sss_physical
from .scenefile import load_scene, save_scene
from .shlight import CONVENTION, EnvMap, project_envmap
from .synth import Catalog, build_corpus, read_mask_png, read_pfm, write_pfm, write_preview
from .synth.scene import build_scene, render_seed
from .volume.tracer import FlashLight, TraceConfig, raycast_gbuffer, trace

EXIT_OK, EXIT_GRADCHECK, EXIT_INPUT, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3, 4

SH_SCHEMA_ID = "transluce-sh/1"
SH_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["$schema", "convention", "coefficients", "samples", "seed", "yaw"],
    "additionalProperties": False,
    "properties": {
        "$schema": {"const": SH_SCHEMA_ID},
        "convention": {"type": "string"},
        "coefficients": {"type": "array", "minItems": 3, "maxItems": 3,
                         "items": {"type": "array", "minItems": 9, "maxItems": 9,
                                   "items": {"type": "number"}}},
        "samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "yaw": {"type": "number"},
    },
}


class InputError(Exception):
    """Bad arguments or unreadable inputs (exit 2)."""


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args, flush=True)


# --- argument types --------------------------------------------------------------------------

def parse_res(text: str) -> tuple:
    """``WxH`` or a single number for a square raster."""
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 64 or 64x48, got {text!r}")
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"resolution must be positive, got {text!r}")
    return tuple(vals)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a value >= 1, got {v}")
    return v


def _default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        return _positive_int(raw)
    except argparse.ArgumentTypeError:
        return None


def parse_assignments(items) -> dict:
    """``sss.alpha=0.9,0.5,0.5,sss.g=0.3`` (or repeated ``--set``) to a dict.

    A comma-separated token without ``=`` continues the previous value, so
    vector values and several assignments can share one argument.
    """
    out = {}
    key = None
    for item in items:
        for tok in item.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if "=" in tok:
                key, val = tok.split("=", 1)
                key = key.strip()
                out[key] = [val]
            elif key is None:
                raise InputError(f"cannot parse assignment {item!r}")
            else:
                out[key].append(tok)
    parsed = {}
    for k, vals in out.items():
        try:
            nums = [float(v) for v in vals]
        except ValueError:
            raise InputError(f"{k}: values must be numbers, got {vals}")
        parsed[k] = nums
    return parsed


def apply_edits(sss: SssParams, edits: dict) -> SssParams:
    d = sss.to_dict()
    for k, vals in edits.items():
        name = k[4:] if k.startswith("sss.") else k
        if name not in d:
            raise InputError(f"unknown parameter {k!r}; use sss.sigma_t, sss.alpha or sss.g")
        if name == "g":
            if len(vals) != 1:
                raise InputError("sss.g takes one value")
            d[name] = vals[0]
        else:
            if len(vals) == 1:
                vals = vals * 3
            if len(vals) != 3:
                raise InputError(f"{k} takes one or three values")
            d[name] = vals
    try:
        return SssParams.from_dict(d)
    except ValueError as e:
        raise InputError(str(e)) from e


# --- parser ----------------------------------------------------------------------------------

def _globals() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    g.add_argument("--threads", type=_positive_int, default=_default_threads(),
                   help=f"worker threads (default ${THREADS_ENV} or 1)")
    g.add_argument("--out", type=Path, default=Path("."), help="output directory (default .)")
    g.add_argument("--res", type=parse_res, default=None,
                   help="raster size WxH, or N for NxN")
    g.add_argument("--quiet", action="store_true", help="print only errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _globals()
    # global flags live on every subcommand, so they go after its name
    ap = argparse.ArgumentParser(prog="transluce", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="render a scene file")
    p.add_argument("scene", type=Path, help="scene JSON")
    p.add_argument("--mode", choices=("direct", "volume"), default="volume")
    p.add_argument("--spp", type=_positive_int, default=64, help="samples per pixel (volume)")
    p.add_argument("--max-bounces", type=_positive_int, default=64)
    p.add_argument("--sh-samples", type=_positive_int, default=1 << 16,
                   help="samples for the SH projection (direct)")
    p.add_argument("--flash-only", action="store_true", help="skip the no-flash shot (volume)")
    p.add_argument("--preview", action="store_true", help="also write tonemapped PNGs")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n", type=_positive_int, required=True, help="number of scenes")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--spp", type=_positive_int, default=64)
    p.add_argument("--max-bounces", type=_positive_int, default=64)
    p.add_argument("--sh-samples", type=_positive_int, default=1 << 18)
    p.add_argument("--meshes", type=Path, default=None, help="directory of .obj/.stl meshes")
    p.add_argument("--roughness-maps", type=Path, default=None,
                   help="directory of roughness textures")
    p.add_argument("--envmaps", type=Path, default=None, help="directory of .pfm envmaps")
    p.add_argument("--no-procedural", action="store_true",
                   help="use only the given asset directories")
    p.add_argument("--validate", action="store_true", help="re-read and check every package")

    p = sub.add_parser("invert", parents=[common], help="fit parameters to observed images")
    p.add_argument("--scene", type=Path, required=True,
                   help="scene JSON supplying geometry, roughness and lighting")
    p.add_argument("--flash", type=Path, required=True, help="observed flash image (PFM)")
    p.add_argument("--noflash", type=Path, default=None, help="observed no-flash image (PFM)")
    p.add_argument("--mask", type=Path, default=None, help="object mask (PNG)")
    p.add_argument("--mode", choices=("direct", "sss"), default="direct")
    p.add_argument("--steps", type=int, default=None, help="Adam steps")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--init", choices=("midpoint", "random"), default="midpoint")
    p.add_argument("--fd-step", type=float, default=0.02, help="FD step, normalized (sss)")
    p.add_argument("--coarse-res", type=_positive_int, default=64,
                   help="render size for the sss loss")
    p.add_argument("--spp", type=_positive_int, default=256,
                   help="samples per pixel for sss renders")
    p.add_argument("--one-shot", action="store_true", help="drop the no-flash term (sss)")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="analytic vs finite-difference gradients of the direct renderer")
    p.add_argument("--scenes", type=_positive_int, default=20)
    p.add_argument("--step", type=float, default=1e-3, help="FD step, normalized")
    p.add_argument("--margin", type=float, default=1e-3, help="clamp-kink exclusion margin")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error")

    p = sub.add_parser("edit", parents=[common], help="re-render with edited medium")
    p.add_argument("--in", dest="scene", type=Path, required=True, help="scene JSON")
    p.add_argument("--set", dest="assign", action="append", default=[],
                   help="sss.sigma_t=..., sss.alpha=..., sss.g=...")
    p.add_argument("--lerp", type=Path, default=None, help="second scene to blend toward")
    p.add_argument("--t", type=float, default=0.5, help="blend weight for --lerp")
    p.add_argument("--spp", type=_positive_int, default=64)
    p.add_argument("--max-bounces", type=_positive_int, default=64)
    p.add_argument("--preview", action="store_true")

    p = sub.add_parser("shproject", parents=[common], help="project an envmap onto SH")
    p.add_argument("--env", type=Path, required=True, help="equirectangular PFM")
    p.add_argument("--yaw", type=float, default=0.0, help="rotation about +y, radians")
    p.add_argument("--samples", type=_positive_int, default=1_000_000)
    return ap


# --- helpers ---------------------------------------------------------------------------------

def _load_scene(path: Path, res):
    try:
        spec = load_scene(path)
    except (ValueError, OSError) as e:
        raise InputError(str(e)) from e
    if res is not None:
        spec = replace(spec, resolution=res)
    return spec


def _read_image(path: Path) -> Image:
    try:
        return read_pfm(path)
    except (ValueError, OSError) as e:
        raise InputError(str(e)) from e


def _write(out: Path, name: str, image: Image, preview: bool, say) -> None:
    write_pfm(out / f"{name}.pfm", image)
    if preview:
        write_preview(out / f"{name}.png", image)
    say(f"wrote {out / (name + '.pfm')}")


def _trace_cfg(args, k: int) -> TraceConfig:
    return TraceConfig(spp=args.spp, max_bounces=args.max_bounces,
                       seed=render_seed(args.seed, k), threads=args.threads)


# --- commands --------------------------------------------------------------------------------

def cmd_render(args, say) -> int:
    spec = _load_scene(args.scene, args.res)
    base = args.scene.parent
    try:
        scene = build_scene(spec, base)
    except (ValueError, OSError) as e:
        raise InputError(str(e)) from e
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cam = spec.camera
    if args.mode == "direct":
        g = raycast_gbuffer(scene.geometry, scene.roughness, cam, args.threads)
        sh = project_envmap(scene.env, args.sh_samples, seed=spec.seeds["illumination"],
                            threads=args.threads)
        img = dr.render_direct(g, Illumination(sh, spec.flash_radiance), cam, args.threads)
        _write(out, "flash", img, args.preview, say)
    else:
        img = trace(scene.geometry, scene.roughness, spec.sss, scene.env, scene.flash(), cam,
                    _trace_cfg(args, 0))
        _write(out, "flash", img, args.preview, say)
        if not args.flash_only:
            img = trace(scene.geometry, scene.roughness, spec.sss, scene.env, None,
                        scene.noflash_camera(), _trace_cfg(args, 1))
            _write(out, "noflash", img, args.preview, say)
    say(f"{args.mode} render {cam.width}x{cam.height} in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK


def cmd_synth(args, say) -> int:
    for d in (args.meshes, args.roughness_maps, args.envmaps):
        if d is not None and not d.is_dir():
            raise InputError(f"asset directory not found: {d}")
    catalog = Catalog.from_dirs(args.meshes, args.roughness_maps, args.envmaps,
                                not args.no_procedural)
    if catalog.empty:
        raise InputError("no assets given and procedural generation disabled")
    cfg = TraceConfig(spp=args.spp, max_bounces=args.max_bounces, threads=args.threads)
    res = args.res or (256, 256)
    report = build_corpus(args.n, args.out, args.seed, cfg, res, args.split, catalog,
                          args.sh_samples, args.validate,
                          progress=lambda sid, status: say(f"{sid}: {status}"))
    say(f"{len(report.ok)}/{args.n} scenes written to {args.out}")
    if report.failed:
        for sid, err in report.failed.items():
            print(f"failed {sid}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _optim_cfg(args, base):
    kw = {"init": args.init, "seed": args.seed}
    for name in ("steps", "lr", "beta1"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    try:
        return replace(base, **kw)
    except ValueError as e:
        raise InputError(str(e)) from e


def _side_by_side(a: Image, b: Image) -> Image:
    return Image(np.concatenate([np.asarray(a.data), np.asarray(b.data)], axis=1))


def _finish_invert(report, out: Path, observed: Image, recovered: Image, say) -> None:
    report.to_json(out / "report.json")
    report.to_csv(out / "losses.csv")
    write_pfm(out / "recovered.pfm", recovered)
    pair = _side_by_side(observed, recovered)
    write_pfm(out / "side_by_side.pfm", pair)
    write_preview(out / "side_by_side.png", pair)
    say(f"best loss {report.best_loss:.6g} at step {report.best_step}; "
        f"report in {out / 'report.json'}")


def cmd_invert(args, say) -> int:
    spec = _load_scene(args.scene, None)
    flash = _read_image(args.flash)
    noflash = _read_image(args.noflash) if args.noflash is not None else None
    mask = None
    if args.mask is not None:
        try:
            mask = read_mask_png(args.mask)
        except (ValueError, OSError) as e:
            raise InputError(str(e)) from e
    size = (flash.height, flash.width)
    for name, im in (("noflash", noflash), ("mask", mask)):
        if im is not None and (im.height, im.width) != size:
            raise InputError(f"{name} is {im.width}x{im.height}, flash is "
                             f"{flash.width}x{flash.height}")
    if args.mode == "sss" and noflash is None and not args.one_shot:
        raise InputError("--mode sss needs --noflash (or --one-shot)")
    spec = replace(spec, resolution=(flash.width, flash.height))
    try:
        scene = build_scene(spec, args.scene.parent)
    except (ValueError, OSError) as e:
        raise InputError(str(e)) from e
    cam = spec.camera
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    if args.mode == "direct":
        cfg = _optim_cfg(args, DIRECT_CONFIG)
        g = raycast_gbuffer(scene.geometry, scene.roughness, cam, args.threads)
        if mask is not None:
            g = GBuffer(g.depth, g.normal, g.roughness, mask, check=False)
        obs = DirectObservation(flash, g, cam)
        try:
            report = fit_direct(obs, cfg=cfg, threads=args.threads)
            diverged = None
        except DivergenceDetected as e:
            report, diverged = e.report, e
        rough = report.extra["roughness"]
        m = g.mask_bool
        gb = GBuffer(g.depth, g.normal, Image(np.where(m, rough, 1.0)[..., None]), g.mask,
                     check=False)
        p = report.physical
        recovered = dr.render_direct(gb, Illumination(p["sh"], p["flash_intensity"]), cam,
                                     args.threads)
    else:
        cfg = _optim_cfg(args, SSS_CONFIG)
        if args.coarse_res > min(size) or size[0] % args.coarse_res or \
                size[1] % args.coarse_res:
            raise InputError(f"--coarse-res {args.coarse_res} must divide the image size")
        obs = SssObservation(flash, noflash if noflash is not None else flash, cam,
                             scene.noflash_camera())
        try:
            report = fit_sss(obs, scene.geometry, scene.roughness, scene.env, cfg=cfg,
                             fd_step=args.fd_step, coarse_res=args.coarse_res, spp=args.spp,
                             seed=args.seed, two_shot=not args.one_shot, threads=args.threads)
            diverged = None
        except DivergenceDetected as e:
            report, diverged = e.report, e
        sss, i = sss_physical(report.params.values)
        recovered = trace(scene.geometry, scene.roughness, sss, scene.env,
                          FlashLight.for_camera(cam, i), cam,
                          TraceConfig(spp=args.spp, seed=render_seed(args.seed, 0),
                                      threads=args.threads))
    _finish_invert(report, out, flash, recovered, say)
    if diverged is not None:
        print(f"diverged: {diverged}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gradcheck(args, say) -> int:
    res = args.res or (64, 64)
    if res[0] != res[1]:
        raise InputError("gradcheck uses square rasters")
    rng = np.random.default_rng(args.seed)
    worst = dict.fromkeys(dr.GROUPS, 0.0)
    fracs = []
    t0 = time.perf_counter()
    for _ in range(args.scenes):
        g, illum, cam = dr.random_scene(rng, res[0])
        errs, frac = dr.gradcheck_scene(g, illum, cam, rng, args.step, args.margin)
        fracs.append(frac)
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    ok = all(v < args.tol for v in worst.values())
    # the table is the point of this command, so it ignores --quiet
    print(f"{'group':<16} {'max_rel_err':>12}  status")
    for k in dr.GROUPS:
        print(f"{k:<16} {worst[k]:>12.3e}  {'PASS' if worst[k] < args.tol else 'FAIL'}")
    print(f"scenes={args.scenes} res={res[0]} excluded={np.mean(fracs):.4f} "
          f"tol={args.tol:g} time={time.perf_counter() - t0:.1f}s")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_edit(args, say) -> int:
    spec = _load_scene(args.scene, args.res)
    if args.lerp is not None and args.assign:
        raise InputError("use either --set or --lerp, not both")
    if args.lerp is not None:
        other = _load_scene(args.lerp, None)
        try:
            new = lerp_sss(spec.sss, other.sss, args.t)
        except ValueError as e:
            raise InputError(str(e)) from e
    elif args.assign:
        new = apply_edits(spec.sss, parse_assignments(args.assign))
    else:
        raise InputError("nothing to edit: give --set or --lerp")
    try:
        scene = build_scene(spec, args.scene.parent)
    except (ValueError, OSError) as e:
        raise InputError(str(e)) from e
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg = _trace_cfg(args, 0)
    for name, sss in (("before", spec.sss), ("after", new)):
        img = trace(scene.geometry, scene.roughness, sss, scene.env, scene.flash(),
                    spec.camera, cfg)
        _write(out, name, img, args.preview, say)
    save_scene(spec.with_sss(new), out / "edited.json")
    say(f"sss {json.dumps(spec.sss.to_dict())} -> {json.dumps(new.to_dict())}")
    return EXIT_OK


def cmd_shproject(args, say) -> int:
    img = _read_image(args.env)
    try:
        env = EnvMap(img, args.yaw)
    except ValueError as e:
        raise InputError(f"{args.env}: {e}") from e
    if not math.isfinite(args.yaw):
        raise InputError("--yaw must be finite")
    sh = project_envmap(env, args.samples, seed=args.seed, threads=args.threads)
    doc = {"$schema": SH_SCHEMA_ID, "convention": CONVENTION,
           "coefficients": np.asarray(sh).tolist(), "samples": args.samples,
           "seed": args.seed, "yaw": args.yaw}
    jsonschema.validate(doc, SH_SCHEMA)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "sh.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    say(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"render": cmd_render, "synth": cmd_synth, "invert": cmd_invert,
            "gradcheck": cmd_gradcheck, "edit": cmd_edit, "shproject": cmd_shproject}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = _Out(args.quiet)
    try:
        return COMMANDS[args.command](args, say)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (TransluceError, RuntimeError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
