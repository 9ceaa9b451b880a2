"""Triplane and camera data model, feature lookup, analytic decoder, and the ``TRI1`` container."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .errors import (
    DimensionMismatchError,
    InvalidDimensionsError,
    MalformedHeaderError,
    MalformedPayloadError,
    NonFiniteError,
    TrifuseIOError,
)

PLANE_NAMES = ("XY", "XZ", "YZ")
DENSITY_SCALE = 25.0
TRI_MAGIC = b"TRI1"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Triplane:
    """Three axis-aligned feature planes, stacked as a ``(3, C, H, W)`` float32 array.

    Plane 0 is XY, plane 1 is XZ, plane 2 is YZ. Within each plane the width
    axis carries the first coordinate of the pair and the height axis the second.
    """

    planes: np.ndarray

    def __post_init__(self):
        a = np.array(self.planes, dtype=np.float32, order="C", copy=True)
        if a.ndim != 4 or a.shape[0] != 3:
            raise InvalidDimensionsError(f"triplane must have shape (3, C, H, W), got {a.shape}")
        if min(a.shape[1:]) < 1:
            raise InvalidDimensionsError(f"triplane dims must be positive, got {a.shape}")
        if not np.isfinite(a).all():
            raise NonFiniteError("triplane contains NaN or Inf")
        object.__setattr__(self, "planes", _readonly(a))

    @property
    def channels(self) -> int:
        return self.planes.shape[1]

    @property
    def height(self) -> int:
        return self.planes.shape[2]

    @property
    def width(self) -> int:
        return self.planes.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.planes.shape

    def __eq__(self, other):
        if not isinstance(other, Triplane):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.planes, other.planes)

    __hash__ = None

    @classmethod
    def zeros(cls, channels: int = 32, height: int = 256, width: int = 256) -> "Triplane":
        return cls(np.zeros((3, channels, height, width), dtype=np.float32))

    @classmethod
    def constant(cls, values, height: int, width: int) -> "Triplane":
        v = np.asarray(values, dtype=np.float32)
        return cls(np.broadcast_to(v[None, :, None, None], (3, v.size, height, width)))

    def check_same_shape(self, other: "Triplane", what: str = "triplane") -> None:
        if self.shape != other.shape:
            raise DimensionMismatchError(f"{what} shape {other.shape} != {self.shape}")


@dataclass(frozen=True, eq=False)
class Camera:
    """World-from-camera extrinsics and normalized intrinsics (OpenCV axes: x right, y down, z forward)."""

    extrinsics: np.ndarray
    intrinsics: np.ndarray

    def __post_init__(self):
        ext = np.array(self.extrinsics, dtype=np.float64).reshape(4, 4)
        K = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        if not (np.isfinite(ext).all() and np.isfinite(K).all()):
            raise NonFiniteError("camera parameters must be finite")
        R = ext[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-5:
            raise ValueError("camera rotation block is not orthonormal")
        object.__setattr__(self, "extrinsics", _readonly(ext))
        object.__setattr__(self, "intrinsics", _readonly(K))

    @property
    def position(self) -> np.ndarray:
        return self.extrinsics[:3, 3].copy()

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3].copy()

    @property
    def forward(self) -> np.ndarray:
        return self.extrinsics[:3, 2].copy()

    def flatten(self) -> np.ndarray:
        """The 25-vector: 16 extrinsic values then 9 intrinsic values, row-major."""
        return np.concatenate([self.extrinsics.ravel(), self.intrinsics.ravel()])

    @classmethod
    def from_vector(cls, vec) -> "Camera":
        v = np.asarray(vec, dtype=np.float64).ravel()
        if v.size != 25:
            raise ValueError(f"camera vector must have 25 entries, got {v.size}")
        return cls(v[:16].reshape(4, 4), v[16:].reshape(3, 3))

    @classmethod
    def look_at(cls, position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                focal: float = 1.2, principal=(0.5, 0.5)) -> "Camera":
        pos = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        ext = np.eye(4)
        ext[:3, 0], ext[:3, 1], ext[:3, 2], ext[:3, 3] = right, down, fwd, pos
        K = np.array([[focal, 0.0, principal[0]], [0.0, focal, principal[1]], [0.0, 0.0, 1.0]])
        return cls(ext, K)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return np.array_equal(self.flatten(), other.flatten())

    __hash__ = None


@dataclass(frozen=True)
class RenderConfig:
    width: int = 128
    height: int = 128
    samples: int = 64
    near: float = 0.0
    far: float = 100.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    half_extent: float = 1.0
    density_scale: float = DENSITY_SCALE

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("render resolution must be at least 1x1")
        if self.samples < 2:
            raise ValueError("samples per ray must be >= 2")
        if not self.near < self.far:
            raise ValueError("near must be < far")
        if self.half_extent <= 0:
            raise ValueError("half_extent must be > 0")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or not all(0.0 <= c <= 1.0 for c in bg):
            raise ValueError("background must be an RGB triple in [0, 1]")
        object.__setattr__(self, "background", bg)

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height, "samples": self.samples,
            "near": self.near, "far": self.far, "background": list(self.background),
            "half_extent": self.half_extent, "density_scale": self.density_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


def sample_plane(plane, u: float, v: float) -> np.ndarray:
    """Bilinear lookup of a ``(C, H, W)`` plane at continuous texel coords, clamped to the border."""
    plane = np.asarray(plane, dtype=np.float32)
    if plane.ndim == 2:
        plane = plane[None]
    return _backend.get("python")._bilinear_texel(
        plane, np.array([u], dtype=np.float64), np.array([v], dtype=np.float64))[0]


def to_texel(coord, size: int):
    """Map normalized ``[-1, 1]`` to ``[0, size - 1]`` (align corners)."""
    return (np.asarray(coord, dtype=np.float64) + 1.0) * 0.5 * (size - 1)


def aggregate_features(tri: Triplane, p) -> np.ndarray:
    """Sum of the three plane features at normalized point ``p`` in ``[-1, 1]^3``."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    out = aggregate_many(tri, pts)
    return out[0] if np.ndim(p) == 1 else out


def aggregate_many(tri: Triplane, pts, channels: int | None = None, threads: int = 1) -> np.ndarray:
    pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)
    nch = tri.channels if channels is None else channels
    return _backend.kernels.sample_points(tri.planes, pts, nch, threads)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def decode(f, density_scale: float = DENSITY_SCALE):
    """Analytic decoder: density from channel 0, RGB from channels 1..3.

    Works on a single feature vector or on a ``(..., C)`` batch.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] < 4:
        raise ValueError(f"decoder needs at least 4 channels, got {f.shape[-1]}")
    density = softplus(f[..., 0]) * density_scale
    color = sigmoid(f[..., 1:4])
    if f.ndim == 1:
        return float(density), color
    return density, color


# -- TRI1 container ----------------------------------------------------------

_HEADER = struct.Struct("<4s4I")


def write_container(path, data: np.ndarray, magic: bytes) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    header = _HEADER.pack(magic, *data.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())
    except OSError as exc:
        raise TrifuseIOError(f"cannot write {path}: {exc}") from exc


def read_container(path, magic: bytes, lead: int, second: int | None = None) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise TrifuseIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than header")
    tag, n0, n1, n2, n3 = _HEADER.unpack_from(raw)
    if tag != magic:
        raise MalformedHeaderError(f"{path}: bad magic {tag!r}, expected {magic!r}")
    if n0 != lead or min(n1, n2, n3) < 1 or (second is not None and n1 != second):
        raise InvalidDimensionsError(f"{path}: invalid dimensions {(n0, n1, n2, n3)}")
    count = n0 * n1 * n2 * n3
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * count:
        raise MalformedPayloadError(
            f"{path}: malformed payload, expected {4 * count} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n0, n1, n2, n3).astype(np.float32)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{path}: payload contains NaN or Inf")
    return data


def save_triplane(tri: Triplane, path) -> None:
    write_container(path, tri.planes, TRI_MAGIC)


def load_triplane(path) -> Triplane:
    return Triplane(read_container(path, TRI_MAGIC, 3))
