"""Ray generation, shoulder ray warping, emission-absorption compositing, triplane volume rendering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import SingularIntrinsicsError
from .triplane import Camera, RenderConfig, Triplane


@dataclass(frozen=True, eq=False)
class Rays:
    """A grid of rays: ``origins`` and unit ``directions`` are ``(H, W, 3)``."""

    origins: np.ndarray
    directions: np.ndarray
    near: float
    far: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.origins.shape[:2]


@dataclass(frozen=True)
class ShoulderParams:
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    neck_height: float = -0.3
    blend_width: float = 0.2

    def __post_init__(self):
        if self.blend_width <= 0:
            raise ValueError("blend_width must be > 0")
        off = tuple(float(v) for v in self.offset)
        if len(off) != 3 or not np.isfinite(off).all():
            raise ValueError("offset must be a finite 3-vector")
        object.__setattr__(self, "offset", off)

    def to_dict(self) -> dict:
        return {"offset": list(self.offset), "neck_height": self.neck_height,
                "blend_width": self.blend_width}

    @classmethod
    def from_dict(cls, d: dict) -> "ShoulderParams":
        return cls(tuple(d["offset"]), d["neck_height"], d["blend_width"])


def generate_rays(cam: Camera, cfg: RenderConfig) -> Rays:
    """One ray per pixel center; pixel (row i, col j) sits at normalized ((j+.5)/W, (i+.5)/H)."""
    K = cam.intrinsics
    if abs(np.linalg.det(K)) < 1e-12 or np.linalg.cond(K) > 1e12:
        raise SingularIntrinsicsError("camera intrinsics are singular")
    Kinv = np.linalg.inv(K)
    u = (np.arange(cfg.width) + 0.5) / cfg.width
    v = (np.arange(cfg.height) + 0.5) / cfg.height
    uu, vv = np.meshgrid(u, v)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    d_cam = pix @ Kinv.T
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.position, d.shape).copy()
    return Rays(o, d, cfg.near, cfg.far)


def cube_entry(origins: np.ndarray, directions: np.ndarray, half_extent: float = 1.0):
    """Entry points of rays into the cube ``[-h, h]^3`` and a hit mask; misses give NaN points."""
    o = origins.reshape(-1, 3)
    d = directions.reshape(-1, 3)
    t0, _, hit = _backend.get("python")._slab(o, d, half_extent)
    t0 = np.maximum(t0, 0.0)
    pts = np.full(o.shape, np.nan)
    pts[hit] = o[hit] + t0[hit, None] * d[hit]
    return pts.reshape(origins.shape), hit.reshape(origins.shape[:-1])


def smoothstep_weight(y, neck_height: float, blend_width: float):
    """0 above the neck, 1 a full blend width below it, cubic smoothstep in between."""
    s = np.clip((neck_height - np.asarray(y, dtype=np.float64)) / blend_width, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def warp_rays_shoulder(rays: Rays, sp: ShoulderParams, half_extent: float = 1.0) -> Rays:
    """Translate ray origins below the neck by a smoothstep fraction of ``sp.offset``.

    The blend is evaluated on the y coordinate where the ray enters the scene cube.
    Rays with zero weight (or missing the cube) are left bit-identical.
    """
    offset = np.asarray(sp.offset, dtype=np.float64)
    if not offset.any():
        return rays
    entry, hit = cube_entry(rays.origins, rays.directions, half_extent)
    beta = np.zeros(hit.shape)
    beta[hit] = smoothstep_weight(entry[hit][:, 1], sp.neck_height, sp.blend_width)
    moved = beta > 0.0
    origins = rays.origins.copy()
    origins[moved] = origins[moved] + beta[moved, None] * offset
    return Rays(origins, rays.directions, rays.near, rays.far)


def composite(densities, colors, deltas, background=(1.0, 1.0, 1.0)):
    """Front-to-back alpha compositing of one ray's samples; returns ``(rgb, alpha)``."""
    sigma = np.asarray(densities, dtype=np.float64)
    c = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    dt = np.asarray(deltas, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    rgb = np.zeros(3)
    wsum = 0.0
    trans = 1.0
    for k in range(sigma.size):
        a = 1.0 - np.exp(-sigma[k] * dt[k])
        w = trans * a
        rgb = rgb + w * c[k]
        wsum = wsum + w
        trans = trans * (1.0 - a)
    return rgb + (1.0 - wsum) * bg, wsum


def composite_weights(densities, deltas) -> np.ndarray:
    sigma = np.asarray(densities, dtype=np.float64)
    alpha = 1.0 - np.exp(-sigma * np.asarray(deltas, dtype=np.float64))
    trans = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
    return trans * alpha


def render_rays(tri: Triplane, rays: Rays, cfg: RenderConfig, threads: int = 1):
    h, w = rays.shape
    o = np.ascontiguousarray(rays.origins.reshape(-1, 3), dtype=np.float64)
    d = np.ascontiguousarray(rays.directions.reshape(-1, 3), dtype=np.float64)
    rgb, acc = _backend.kernels.render_rays(
        tri.planes, o, d, float(rays.near), float(rays.far), int(cfg.samples),
        float(cfg.half_extent), float(cfg.density_scale),
        np.asarray(cfg.background, dtype=np.float64), int(threads))
    img = np.clip(rgb, 0.0, 1.0).reshape(h, w, 3).astype(np.float32)
    return img, acc.reshape(h, w)


def render(tri: Triplane, cam: Camera, cfg: RenderConfig, sp: ShoulderParams | None = None,
           threads: int = 1, return_alpha: bool = False):
    """Volume-render ``tri`` from ``cam``; returns an ``(H, W, 3)`` float32 image in [0, 1]."""
    rays = generate_rays(cam, cfg)
    if sp is not None:
        rays = warp_rays_shoulder(rays, sp, cfg.half_extent)
    img, alpha = render_rays(tri, rays, cfg, threads)
    return (img, alpha) if return_alpha else img
