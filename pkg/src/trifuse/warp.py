"""Per-plane 2D displacement fields: backward warping, synthetic distortion, fixed-point inversion.

Also hosts the undistorter interface with its oracle and identity realizations and
the triplane L1 loss that supervises undistortion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import _backend
from .errors import ConvergenceError, DimensionMismatchError, NonFiniteError
from .rng import rng_for
from .triplane import Triplane, read_container, write_container

WARP_MAGIC = b"WRP1"


@dataclass(frozen=True, eq=False)
class WarpField:
    """Displacements ``(3, 2, H, W)`` in texels; channel 0 is du (width axis), channel 1 is dv."""

    field: np.ndarray

    def __post_init__(self):
        a = np.array(self.field, dtype=np.float32, order="C", copy=True)
        if a.ndim != 4 or a.shape[:2] != (3, 2):
            raise DimensionMismatchError(f"warp field must have shape (3, 2, H, W), got {a.shape}")
        if not np.isfinite(a).all():
            raise NonFiniteError("warp field contains NaN or Inf")
        a.setflags(write=False)
        object.__setattr__(self, "field", a)

    @property
    def height(self) -> int:
        return self.field.shape[2]

    @property
    def width(self) -> int:
        return self.field.shape[3]

    @classmethod
    def zeros(cls, height: int, width: int) -> "WarpField":
        return cls(np.zeros((3, 2, height, width), dtype=np.float32))

    @classmethod
    def constant(cls, du: float, dv: float, height: int, width: int) -> "WarpField":
        f = np.empty((3, 2, height, width), dtype=np.float32)
        f[:, 0], f[:, 1] = du, dv
        return cls(f)

    def magnitude(self) -> np.ndarray:
        f = self.field.astype(np.float64)
        return np.sqrt(f[:, 0] ** 2 + f[:, 1] ** 2)

    def scaled(self, s: float) -> "WarpField":
        return WarpField(self.field.astype(np.float64) * s)

    def __neg__(self) -> "WarpField":
        return WarpField(-self.field)

    def __eq__(self, other):
        if not isinstance(other, WarpField):
            return NotImplemented
        return np.array_equal(self.field, other.field)

    __hash__ = None


def save_warp(w: WarpField, path) -> None:
    write_container(path, w.field, WARP_MAGIC)


def load_warp(path) -> WarpField:
    return WarpField(read_container(path, WARP_MAGIC, 3, second=2))


def _check_dims(planes: np.ndarray, w: WarpField) -> None:
    if planes.shape[0] != 3 or planes.shape[2:] != w.field.shape[2:]:
        raise DimensionMismatchError(
            f"warp field {w.field.shape[2:]} does not match planes {planes.shape[2:]}")


def warp_array(planes: np.ndarray, w: WarpField, threads: int = 1) -> np.ndarray:
    """Backward-warp a raw ``(3, C, H, W)`` array (used for triplanes and visibility maps)."""
    planes = np.ascontiguousarray(planes, dtype=np.float32)
    _check_dims(planes, w)
    return _backend.kernels.warp_planes(planes, w.field, int(threads))


def apply_warp(tri: Triplane, w: WarpField, threads: int = 1) -> Triplane:
    """Output texel (u, v) of plane k samples input plane k at (u + du, v + dv), border clamped."""
    _check_dims(tri.planes, w)
    if not w.field.any():
        return tri
    return Triplane(warp_array(tri.planes, w, threads))


def upsample_grid(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear (align-corners) upsampling of ``(..., h, w)`` grids to ``(..., height, width)``."""
    coarse = np.asarray(coarse, dtype=np.float64)
    h, w = coarse.shape[-2:]
    ys = np.linspace(0.0, h - 1, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, width) if width > 1 else np.zeros(1)
    return _interp_axes(coarse, ys, xs)


def _interp_axes(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = grid.shape[-2:]
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[..., y0[:, None], x0[None, :]]
    g01 = grid[..., y0[:, None], x1[None, :]]
    g10 = grid[..., y1[:, None], x0[None, :]]
    g11 = grid[..., y1[:, None], x1[None, :]]
    return ((1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g01
            + (1 - fx) * fy * g10 + fx * fy * g11)


def smooth_grid(rng: np.random.Generator, lead: tuple[int, ...], height: int, width: int,
                spacing: float) -> np.ndarray:
    """Standard-normal coarse grid with a node every ``spacing`` texels, bilinearly upsampled."""
    gh = int(math.ceil((height - 1) / spacing)) + 1 if height > 1 else 1
    gw = int(math.ceil((width - 1) / spacing)) + 1 if width > 1 else 1
    coarse = rng.standard_normal(lead + (gh, gw))
    return _interp_axes(coarse, np.arange(height) / spacing, np.arange(width) / spacing)


def synth_distortion(seed: int, max_magnitude: float, smoothness: float,
                     height: int = 256, width: int = 256, stream: tuple[int, ...] = ()) -> WarpField:
    """Seeded low-frequency displacement field with ``|d| <= max_magnitude`` everywhere.

    Coarse vectors are drawn uniformly from the disk of radius ``max_magnitude``;
    bilinear upsampling is a convex combination, so the bound carries over.
    """
    if max_magnitude < 0:
        raise ValueError("max_magnitude must be >= 0")
    if smoothness <= 0:
        raise ValueError("smoothness must be > 0")
    if max_magnitude == 0:
        return WarpField.zeros(height, width)
    rng = rng_for(seed, "distortion", *stream)
    gh = int(math.ceil((height - 1) / smoothness)) + 1 if height > 1 else 1
    gw = int(math.ceil((width - 1) / smoothness)) + 1 if width > 1 else 1
    # shrink by 1e-6 so float32 rounding cannot cross the bound
    r = max_magnitude * (1.0 - 1e-6) * np.sqrt(rng.random((3, gh, gw)))
    th = rng.random((3, gh, gw)) * (2.0 * math.pi)
    coarse = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    f = _interp_axes(coarse, np.arange(height) / smoothness, np.arange(width) / smoothness)
    return WarpField(f)


def compose_residual(w: WarpField, w_inv: WarpField) -> np.ndarray:
    """Per-texel |w_inv(x) + w(x + w_inv(x))|: zero when ``w_inv`` exactly inverts ``w``.

    Warping by ``w`` then by ``w_inv`` samples the source at ``x + w_inv(x) + w(x + w_inv(x))``.
    """
    inv = w_inv.field.astype(np.float64)
    moved = warp_array(w.field.astype(np.float32), w_inv).astype(np.float64)
    r = inv + moved
    return np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2)


def _sample_field(w: np.ndarray, g: np.ndarray, threads: int) -> np.ndarray:
    # evaluate w at x + g(x), both (3, 2, H, W), in double precision
    return _backend.kernels.sample_field(np.ascontiguousarray(w, dtype=np.float64),
                                         np.ascontiguousarray(g, dtype=np.float64), int(threads))


def invert_warp(w: WarpField, iterations: int = 20, tolerance: float | None = None,
                threads: int = 1, return_history: bool = False):
    """Fixed-point inversion ``g(x) <- -w(x + g(x))`` starting from ``g = -w``.

    Raises ``ConvergenceError`` when ``tolerance`` is given and the max composition
    residual after ``iterations`` steps still exceeds it.
    """
    f = w.field.astype(np.float64)
    g = -f
    history = []
    for _ in range(max(iterations - 1, 0)):
        g = -_sample_field(f, g, threads)
        if return_history:
            history.append(float(_residual64(f, g, threads).max()))
    result = WarpField(g.astype(np.float32))
    if tolerance is not None:
        res = float(compose_residual(w, result).max())
        if res > tolerance:
            raise ConvergenceError(f"invert_warp did not converge in {iterations} iterations", res)
    return (result, history) if return_history else result


def _residual64(f: np.ndarray, g: np.ndarray, threads: int) -> np.ndarray:
    r = g + _sample_field(f, g, threads)
    return np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2)


class Undistorter(Protocol):
    def estimate_correction(self, raw: Triplane, cano: Triplane) -> WarpField: ...


class OracleUndistorter:
    """Knows the injected distortion and returns its inverse as the correction field."""

    def __init__(self, distortion: WarpField, iterations: int = 20, tolerance: float | None = None):
        self.distortion = distortion
        self.iterations = iterations
        self.tolerance = tolerance

    def estimate_correction(self, raw: Triplane, cano: Triplane | None = None) -> WarpField:
        return invert_warp(self.distortion, self.iterations, self.tolerance)


class IdentityUndistorter:
    def estimate_correction(self, raw: Triplane, cano: Triplane | None = None) -> WarpField:
        return WarpField.zeros(raw.height, raw.width)


def undistort(raw: Triplane, cano: Triplane | None, undistorter: Undistorter,
              threads: int = 1) -> tuple[Triplane, WarpField]:
    corr = undistorter.estimate_correction(raw, cano)
    return apply_warp(raw, corr, threads), corr


def oracle_undistort(raw: Triplane, true_distortion: WarpField, iterations: int = 20,
                     tolerance: float | None = None, threads: int = 1) -> Triplane:
    return apply_warp(raw, invert_warp(true_distortion, iterations, tolerance), threads)


def identity_undistorter(raw: Triplane, cano: Triplane | None = None) -> Triplane:
    return raw


def undistort_loss(undist: Triplane, target: Triplane) -> float:
    """Mean absolute difference over all 3*C*H*W entries."""
    undist.check_same_shape(target)
    return float(np.mean(np.abs(undist.planes.astype(np.float64) - target.planes.astype(np.float64))))
