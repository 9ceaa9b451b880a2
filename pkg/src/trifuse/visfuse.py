"""Visibility triplanes, occlusion masks, the reference fuser, and the training losses.

Visibility maps and masks are stored as single-channel triplanes ``(3, 1, h, w)``
with values in [0, 1]; 1 marks texels whose content the camera sees.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from . import _backend
from .errors import DimensionMismatchError
from .triplane import Camera, RenderConfig, Triplane
from .warp import WarpField, upsample_grid, warp_array

EPS = 1e-6
VIS_RESOLUTION = 128
LOSS_TERMS = ("undist", "fusion", "vis", "render")


def _arr(x) -> np.ndarray:
    if isinstance(x, Triplane):
        return x.planes.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def compute_visibility_gt(tri: Triplane, cam: Camera, cfg: RenderConfig,
                          resolution: int = VIS_RESOLUTION, column_samples: int = 32,
                          ray_samples: int = 32, threads: int = 1) -> Triplane:
    """Ground-truth visibility by transmittance-weighted projection.

    Each texel's column (along the axis normal to its plane) is sampled at
    ``column_samples`` points; every sample's camera transmittance is ray-marched
    with ``ray_samples`` steps and averaged with density weights. Columns with
    (almost) no mass are fully visible.
    """
    dens = np.ascontiguousarray(tri.planes[:, :1])
    vis = _backend.kernels.visibility(
        dens, np.ascontiguousarray(cam.position, dtype=np.float64), int(resolution),
        int(column_samples), int(ray_samples), float(cfg.half_extent),
        float(cfg.density_scale), EPS, int(threads))
    return Triplane(vis[:, None].astype(np.float32))


def upsample_visibility(vis, height: int, width: int) -> Triplane:
    """Bilinear (align-corners) resampling of a visibility triplane to ``height x width``."""
    a = _arr(vis)
    if a.shape[2:] == (height, width):
        return vis if isinstance(vis, Triplane) else Triplane(a)
    out = np.clip(upsample_grid(a, height, width), 0.0, 1.0)
    return Triplane(out.astype(np.float32))


def warp_visibility(vis: Triplane, w: WarpField) -> Triplane:
    """Carry a visibility triplane through the same warp as its triplane."""
    v = upsample_visibility(vis, w.height, w.width)
    if not w.field.any():
        return v
    return Triplane(np.clip(warp_array(v.planes, w), 0.0, 1.0))


def occlusion_mask(vis_input, vis_cano) -> Triplane:
    """Texels hidden in the input frame but seen by the reference: (1 - vis_in) * vis_cano."""
    vi, vc = _arr(vis_input), _arr(vis_cano)
    _same(vi, vc, "occlusion_mask")
    return Triplane(np.clip((1.0 - vi) * vc, 0.0, 1.0).astype(np.float32))


class Fuser(Protocol):
    def __call__(self, undist: Triplane, vis_undist, cano: Triplane, vis_cano) -> Triplane: ...


def fuse(undist: Triplane, vis_u, cano: Triplane, vis_c) -> Triplane:
    """Reference fuser: per texel, take the canonical content where the input is occluded.

    ``w_c = (1 - vis_u) * vis_c`` and the output is ``(1 - w_c) * undist + w_c * cano``,
    with one weight shared by all channels of a texel.
    """
    undist.check_same_shape(cano, "canonical triplane")
    H, W = undist.height, undist.width
    vu = _arr(upsample_visibility(vis_u, H, W))
    vc = _arr(upsample_visibility(vis_c, H, W))
    if vu.shape != (3, 1, H, W) or vc.shape != (3, 1, H, W):
        raise DimensionMismatchError("visibility triplanes must be (3, 1, h, w)")
    wc = (1.0 - vu) * vc
    wu = 1.0 - wc
    out = wu * undist.planes.astype(np.float64) + wc * cano.planes.astype(np.float64)
    return Triplane(out.astype(np.float32))


reference_fuser: Fuser = fuse


# -- losses ------------------------------------------------------------------

def l1(a, b) -> float:
    a, b = _arr(a), _arr(b)
    _same(a, b, "L1")
    return float(np.mean(np.abs(a - b)))


def visibility_loss(pred_raw, gt_raw, pred_cano, gt_cano) -> float:
    return l1(pred_raw, gt_raw) + l1(pred_cano, gt_cano)


def _masked_term(diff: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray | None]:
    C = diff.shape[1]
    mass = float(mask.sum()) * C
    if mass < EPS:
        return 0.0, None
    return float((diff * mask).sum() / mass), mask / mass


def _fusion_parts(fused, gt, vis_gt, occ_mask):
    f, g = _arr(fused), _arr(gt)
    _same(f, g, "fusion_loss")
    H, W = f.shape[2:]
    mv = _arr(upsample_visibility(vis_gt, H, W)) if _arr(vis_gt).shape[2:] != (H, W) else _arr(vis_gt)
    mo = _arr(occ_mask)
    if mv.shape != (f.shape[0], 1, H, W) or mo.shape != (f.shape[0], 1, H, W):
        raise DimensionMismatchError("fusion_loss masks must be (3, 1, H, W) matching the triplane")
    return f, g, mv, mo


def fusion_loss(fused, gt, vis_gt, occ_mask) -> float:
    """Mean L1 plus visibility- and occlusion-weighted mean L1 (masks broadcast over channels)."""
    f, g, mv, mo = _fusion_parts(fused, gt, vis_gt, occ_mask)
    diff = np.abs(f - g)
    return float(diff.mean()) + _masked_term(diff, mv)[0] + _masked_term(diff, mo)[0]


def fusion_loss_grad(fused, gt, vis_gt, occ_mask) -> np.ndarray:
    """Subgradient of ``fusion_loss`` with respect to ``fused`` (sign(0) taken as 0)."""
    f, g, mv, mo = _fusion_parts(fused, gt, vis_gt, occ_mask)
    d = f - g
    weight = np.full(d.shape, 1.0 / d.size)
    for m in (mv, mo):
        _, w = _masked_term(np.abs(d), m)
        if w is not None:
            weight = weight + w
    return np.sign(d) * weight


def _mse(a, b) -> float:
    return float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))


def _dssim(a, b) -> float:
    from .evaluate import ssim
    return (1.0 - ssim(a, b)) / 2.0


RENDER_LOSS_METRICS: dict[str, Callable] = {"l1": l1, "mse": _mse, "dssim": _dssim}


def render_loss(img_gt, img_render, metric: str | Callable = "l1") -> float:
    """Image-space loss; stands in for a perceptual loss with a pluggable metric (default L1)."""
    a, b = np.asarray(img_gt, np.float64), np.asarray(img_render, np.float64)
    _same(a, b, "render_loss")
    fn = RENDER_LOSS_METRICS[metric] if isinstance(metric, str) else metric
    return float(fn(a, b))


def render_loss_grad(img_gt, img_render) -> np.ndarray:
    """Subgradient of the L1 render loss with respect to the rendered image."""
    a, b = np.asarray(img_gt, np.float64), np.asarray(img_render, np.float64)
    _same(a, b, "render_loss")
    return np.sign(b - a) / b.size


def total_loss(parts: Mapping[str, float] | Sequence[float],
               weights: Mapping[str, float] | Sequence[float]) -> float:
    """``w_undist*L_undist + w_fusion*L_fusion + w_vis*L_vis + w_render*L_render``."""
    p = [parts[k] for k in LOSS_TERMS] if isinstance(parts, Mapping) else list(parts)
    w = [weights[k] for k in LOSS_TERMS] if isinstance(weights, Mapping) else list(weights)
    if len(p) != 4 or len(w) != 4:
        raise ValueError("total_loss needs four parts and four weights")
    if any(x < 0 for x in w):
        raise ValueError("loss weights must be nonnegative")
    total = 0.0
    for wi, pi in zip(w, p):
        total += wi * pi
    return total


def loss_report(parts: Mapping[str, float], weights: Mapping[str, float],
                metric: str = "l1") -> dict:
    """JSON-ready record of loss terms, weights, total, and the render metric in use."""
    rec = {f"L_{k}": float(parts[k]) for k in LOSS_TERMS}
    rec["total"] = total_loss(parts, weights)
    rec["weights"] = {k: float(weights[k]) for k in LOSS_TERMS}
    rec["metric"] = metric
    rec["substitutions"] = {"render_loss": f"LPIPS replaced by {metric}"}
    return rec


# -- gradient check ----------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: list[tuple[int, ...]] = field(default_factory=list)
    skipped: list[tuple[int, ...]] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)


def numeric_grad_check(loss_fn: Callable[[np.ndarray], float], x, analytic_grad,
                       eps: float = 1e-4, sample_count: int = 64, seed: int = 0,
                       kink_distance=None) -> GradCheckResult:
    """Compare ``analytic_grad`` with central differences at randomly chosen entries.

    ``kink_distance`` (same shape as ``x``) gives each entry's distance to the nearest
    nondifferentiable point; entries closer than ``10 * eps`` are skipped and listed.
    """
    x0 = _arr(x).copy()
    g = np.asarray(analytic_grad, dtype=np.float64)
    _same(x0, g, "numeric_grad_check")
    rng = np.random.default_rng(seed)
    picks = rng.choice(x0.size, size=min(sample_count, x0.size), replace=False)
    kd = None if kink_distance is None else np.asarray(kink_distance, np.float64).ravel()
    res = GradCheckResult(0.0)
    flat = x0.reshape(-1)
    for i in picks:
        idx = np.unravel_index(int(i), x0.shape)
        if kd is not None and kd[i] <= 10 * eps:
            res.skipped.append(tuple(int(v) for v in idx))
            continue
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn(x0)
        flat[i] = orig - eps
        down = loss_fn(x0)
        flat[i] = orig
        fd = (up - down) / (2 * eps)
        an = g.reshape(-1)[i]
        denom = max(abs(an), abs(fd), 1e-30)
        err = abs(fd - an) / denom
        res.checked.append(tuple(int(v) for v in idx))
        res.errors.append(err)
        res.max_rel_error = max(res.max_rel_error, err)
    return res
