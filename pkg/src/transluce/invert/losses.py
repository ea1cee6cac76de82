"""Reconstruction losses and MAE reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..core import Image, ParamRanges, SssParams, normalize_value
from ..errors import EmptyList, MaskEmpty, ShapeMismatch


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Image) else x, dtype=np.float64)


def _mask_bool(mask, shape) -> np.ndarray:
    m = _arr(mask)
    if m.ndim == 3:
        m = m[..., 0]
    if m.shape != tuple(shape[:2]):
        raise ShapeMismatch(f"mask {m.shape} does not match raster {shape[:2]}")
    return m > 0.5


def l1_image(a, b, mask) -> float:
    """Mean absolute difference over mask pixels and channels."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    m = _mask_bool(mask, a.shape)
    if not m.any():
        raise MaskEmpty("loss mask selects no pixels")
    return float(np.mean(np.abs(a[m] - b[m])))


def l2_vec(a, b) -> float:
    """Mean squared difference."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64)).ravel()
    b = np.atleast_1d(np.asarray(b, dtype=np.float64)).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class LossWeights:
    w_D: float = 5.0
    w_N: float = 1.0
    w_R: float = 1.0
    w_sh: float = 1.0
    w_i: float = 1.0
    w_sigma_t: float = 1.0
    w_alpha: float = 1.0
    w_g: float = 1.0
    w_If: float = 1.0
    w_alter: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")


@dataclass(frozen=True, eq=False)
class Estimate:
    """One full set of scene quantities; any field may be None when absent.

    Parameters are physical. The L2 terms compare them after mapping to the
    normalized [-1, 1] coordinates, so every group is on the same scale.
    """

    depth: object = None
    normal: object = None
    roughness: object = None
    sh: object = None
    flash_intensity: float | None = None
    sss: SssParams | None = None
    flash: object = None
    altered: tuple = ()
    mask: object = None


IMAGE_TERMS = (("D", "depth", "w_D"), ("N", "normal", "w_N"), ("R", "roughness", "w_R"),
               ("If", "flash", "w_If"))


def _param_terms(pred: Estimate, gt: Estimate, ranges: ParamRanges):
    if pred.sh is not None and gt.sh is not None:
        yield "sh", "w_sh", normalize_value("sh", pred.sh, ranges), \
            normalize_value("sh", gt.sh, ranges)
    if pred.flash_intensity is not None and gt.flash_intensity is not None:
        yield "i", "w_i", normalize_value("flash_intensity", pred.flash_intensity, ranges), \
            normalize_value("flash_intensity", gt.flash_intensity, ranges)
    if pred.sss is not None and gt.sss is not None:
        for name, key in (("sigma_t", "w_sigma_t"), ("alpha", "w_alpha"), ("g", "w_g")):
            yield name, key, normalize_value(name, getattr(pred.sss, name), ranges), \
                normalize_value(name, getattr(gt.sss, name), ranges)


def total_loss(pred: Estimate, gt: Estimate, w: LossWeights = LossWeights(),
               ranges: ParamRanges = ParamRanges()):
    """Weighted loss and its per-term breakdown.

    L1 terms (depth, normal, roughness, flash image, altered images) average
    over the ground-truth mask; L2 terms cover sh, i, sigma_t, alpha and g.
    Terms whose inputs are missing on either side are left out.
    """
    mask = gt.mask if gt.mask is not None else pred.mask
    parts = {}
    for key, attr, wname in IMAGE_TERMS:
        a, b = getattr(pred, attr), getattr(gt, attr)
        if a is None or b is None:
            continue
        if mask is None:
            raise MaskEmpty("image terms need a mask")
        parts[key] = getattr(w, wname) * l1_image(a, b, mask)
    for name, wname, a, b in _param_terms(pred, gt, ranges):
        parts[name] = getattr(w, wname) * l2_vec(a, b)
    if len(pred.altered) != len(gt.altered):
        raise ShapeMismatch(f"{len(pred.altered)} altered predictions for "
                            f"{len(gt.altered)} targets")
    for k, (a, b) in enumerate(zip(pred.altered, gt.altered)):
        parts[f"alter{k}"] = w.w_alter * l1_image(a, b, mask)
    total = 0.0
    for v in parts.values():
        total += v
    return total, parts


# --- MAE table ---------------------------------------------------------------------------

MAE_GROUPS = ("N", "D", "R", "sh", "i", "sigma_t", "alpha", "g")
_NORM_NAME = {"R": "roughness", "sh": "sh", "i": "flash_intensity", "sigma_t": "sigma_t",
              "alpha": "alpha", "g": "g"}


def _abs_errors(pred: Estimate, gt: Estimate):
    mask = gt.mask if gt.mask is not None else pred.mask
    rasters = {"N": "normal", "D": "depth", "R": "roughness"}
    for key, attr in rasters.items():
        a, b = getattr(pred, attr), getattr(gt, attr)
        if a is not None and b is not None:
            a, b = _arr(a), _arr(b)
            if a.shape != b.shape:
                raise ShapeMismatch(f"{key}: {a.shape} vs {b.shape}")
            m = _mask_bool(mask, a.shape) if mask is not None else np.ones(a.shape[:2], bool)
            yield key, np.abs(a[m] - b[m])
    if pred.sh is not None and gt.sh is not None:
        yield "sh", np.abs(np.ravel(pred.sh) - np.ravel(gt.sh))
    if pred.flash_intensity is not None and gt.flash_intensity is not None:
        yield "i", np.abs(np.array([pred.flash_intensity - gt.flash_intensity]))
    if pred.sss is not None and gt.sss is not None:
        for name in ("sigma_t", "alpha", "g"):
            yield name, np.abs(np.ravel(getattr(pred.sss, name)) - np.ravel(getattr(gt.sss, name)))


@dataclass(frozen=True)
class MaeTable:
    """Per-group mean and standard deviation (over scenes) of the per-scene MAE."""

    physical: dict
    normalized: dict

    def row(self, group, units="physical"):
        return getattr(self, units)[group]

    def to_text(self) -> str:
        lines = [f"{'group':<8} {'physical':>22} {'normalized':>22}"]
        for g in MAE_GROUPS:
            if g not in self.physical:
                continue
            p, n = self.physical[g], self.normalized[g]
            lines.append(f"{g:<8} {p[0]:>12.6f}({p[1]:.6f}) {n[0]:>12.6f}({n[1]:.6f})")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"physical": {k: {"mean": v[0], "std": v[1]} for k, v in self.physical.items()},
                "normalized": {k: {"mean": v[0], "std": v[1]}
                               for k, v in self.normalized.items()}}


def mae_report(preds, gts, ranges: ParamRanges = ParamRanges()) -> MaeTable:
    """Mean(std) over scenes of each group's mean absolute error.

    Physical units are the parameters as given. Normalized units divide by
    the half-width of the group's range, which matches the [-1, 1] codec;
    normals and depth have no range and read the same in both columns.
    """
    preds, gts = list(preds), list(gts)
    if not preds:
        raise EmptyList("mae_report needs at least one pair")
    if len(preds) != len(gts):
        raise ShapeMismatch(f"{len(preds)} predictions for {len(gts)} ground truths")
    per = {}
    for p, g in zip(preds, gts):
        for key, err in _abs_errors(p, g):
            per.setdefault(key, []).append(float(np.mean(err)) if err.size else 0.0)
    phys, norm = {}, {}
    for key in MAE_GROUPS:
        if key not in per:
            continue
        v = np.array(sorted(per[key]))
        phys[key] = (float(np.mean(v)), float(np.std(v)))
        scale = ranges.half_width(_NORM_NAME[key]) if key in _NORM_NAME else 1.0
        norm[key] = (float(np.mean(v / scale)), float(np.std(v / scale)))
    return MaeTable(phys, norm)
