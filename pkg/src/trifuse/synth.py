"""Deterministic synthetic multi-view portrait sequences.

A procedural "identity" triplane (head and torso blobs plus smooth appearance
noise) is animated per frame by a localized expression warp and a shoulder ray
warp, rendered from a camera rig, and turned into per-view "raw" triplanes by
injecting view-dependent distortion and degrading content the input view cannot see.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import TrifuseIOError
from .imageio import read_image, write_image
from .render import ShoulderParams, render
from .rng import rng_for
from .triplane import Camera, RenderConfig, Triplane, load_triplane, save_triplane
from .visfuse import compute_visibility_gt, upsample_visibility
from .warp import WarpField, apply_warp, load_warp, save_warp, smooth_grid, synth_distortion

# (center, radii) of the head and torso ellipsoids in normalized scene coords
HEAD = ((0.0, 0.25, 0.0), (0.42, 0.52, 0.45))
TORSO = ((0.0, -0.62, -0.05), (0.75, 0.32, 0.40))
DENSITY_GAIN = 30.0
DENSITY_BIAS = -2.0
EXPRESSION_MAX_TEXELS = 6.0


@dataclass(frozen=True)
class AugmentationSpec:
    brightness: float = 0.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0

    def __post_init__(self):
        if not -0.5 <= self.brightness <= 0.5:
            raise ValueError("brightness must be in [-0.5, 0.5]")
        if not 0.5 <= self.contrast <= 2.0:
            raise ValueError("contrast gain must be in [0.5, 2]")
        if not 0.0 <= self.saturation <= 2.0:
            raise ValueError("saturation gain must be in [0, 2]")
        if not math.isfinite(self.hue):
            raise ValueError("hue must be finite")

    @property
    def is_identity(self) -> bool:
        return (self.brightness == 0.0 and self.contrast == 1.0 and self.saturation == 1.0
                and self.hue % 360.0 == 0.0)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "AugmentationSpec":
        return cls(brightness=float(rng.uniform(-0.1, 0.1)), contrast=float(rng.uniform(0.8, 1.25)),
                   saturation=float(rng.uniform(0.7, 1.3)), hue=float(rng.uniform(-15.0, 15.0)))


def _default_expressions(frames: int) -> list[float]:
    return [0.8 * math.sin(2.0 * math.pi * t / frames) for t in range(frames)]


def _default_shoulders(frames: int) -> list[list[float]]:
    return [[0.06 * math.sin(2.0 * math.pi * t / frames), 0.0, 0.0] for t in range(frames)]


@dataclass
class SceneSpec:
    seed: int = 0
    frames: int = 8
    views: int = 4
    resolution: int = 128
    channels: int = 8
    smoothness: float = 16.0
    expressions: list[float] | None = None
    shoulder_offsets: list[list[float]] | None = None
    neck_height: float = -0.3
    blend_width: float = 0.2
    augment: bool = False
    augmentations: list[dict] | None = None
    distortion_magnitude: float = 4.0
    distortion_smoothness: float = 32.0
    occlusion_corruption: float = 1.0
    camera_radius: float = 2.7
    focal: float = 1.2
    max_yaw: float = 60.0
    max_pitch: float = 15.0
    render: dict = field(default_factory=lambda: RenderConfig().to_dict())
    vis_resolution: int = 128
    vis_column_samples: int = 24
    vis_ray_samples: int = 24
    image_format: str = "pfm"

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.views < 2:
            raise ValueError("views must be >= 2 (one input view plus novel views)")
        if self.channels < 4 or self.resolution < 2:
            raise ValueError("triplanes need >= 4 channels and resolution >= 2")
        if self.smoothness <= 0 or self.distortion_smoothness <= 0:
            raise ValueError("smoothness scales must be > 0")
        if self.image_format not in ("png", "pfm"):
            raise ValueError("image_format must be 'png' or 'pfm'")
        if self.expressions is None:
            self.expressions = _default_expressions(self.frames)
        if self.shoulder_offsets is None:
            self.shoulder_offsets = _default_shoulders(self.frames)
        if len(self.expressions) != self.frames or len(self.shoulder_offsets) != self.frames:
            raise ValueError("need one expression and one shoulder offset per frame")
        if any(not -1.0 <= e <= 1.0 for e in self.expressions):
            raise ValueError("expressions must lie in [-1, 1]")
        if self.augmentations is None:
            self.augmentations = [
                asdict(AugmentationSpec.random(rng_for(self.seed, "augment", i))
                       if self.augment and i > 0 else AugmentationSpec())
                for i in range(self.views)]
        if len(self.augmentations) != self.views:
            raise ValueError("need one augmentation per view")
        vals = [*self.expressions, *np.ravel(self.shoulder_offsets)]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("scene parameters must be finite")
        self.render = RenderConfig.from_dict(self.render).to_dict()

    @property
    def render_config(self) -> RenderConfig:
        return RenderConfig.from_dict(self.render)

    def shoulder(self, t: int) -> ShoulderParams:
        return ShoulderParams(tuple(self.shoulder_offsets[t]), self.neck_height, self.blend_width)

    def augmentation(self, i: int) -> AugmentationSpec:
        return AugmentationSpec(**self.augmentations[i])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# -- identity and expression -------------------------------------------------

def _plane_coords(res: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(-1.0, 1.0, res)
    b, a = np.meshgrid(t, t, indexing="ij")
    return a, b


def _ellipse_imprint(a, b, ca, cb, ra, rb):
    # one plane's share of 1 - sum(((x - c) / r)^2); the three planes sum to the 3D form
    return 1.0 / 3.0 - 0.5 * (((a - ca) / ra) ** 2 + ((b - cb) / rb) ** 2)


_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


def gen_canonical_triplane(seed: int, smoothness: float = 16.0, channels: int = 32,
                           resolution: int = 256) -> Triplane:
    """Seeded identity triplane whose density concentrates in a head-and-torso region."""
    if smoothness <= 0:
        raise ValueError("smoothness must be > 0")
    if channels < 4:
        raise ValueError("need at least 4 channels")
    rng = rng_for(seed, "identity")
    noise = smooth_grid(rng, (3, channels), resolution, resolution, smoothness)
    base = rng.normal(0.0, 0.6, size=3)
    planes = np.empty((3, channels, resolution, resolution))
    a, b = _plane_coords(resolution)
    for p, (i, j) in enumerate(_PLANE_AXES):
        imprint = np.maximum(
            *(_ellipse_imprint(a, b, c[i], c[j], r[i], r[j]) for c, r in (HEAD, TORSO)))
        planes[p, 0] = DENSITY_GAIN * imprint + DENSITY_BIAS / 3.0 + 0.3 * noise[p, 0]
        planes[p, 1:4] = base[:, None, None] / 3.0 + 0.4 * noise[p, 1:4]
        planes[p, 4:] = noise[p, 4:]
    return Triplane(planes.astype(np.float32))


_EXPR_CENTERS = ((0.0, 0.0), (0.0, 0.35), (0.0, 0.35))
_EXPR_DIRS = ((0.0, 1.0), (0.0, 1.0), (1.0, 0.0))
_EXPR_SIGMA = 0.15


def expression_field(height: int, width: int) -> WarpField:
    """Unit-strength localized bump (peak |d| <= 6 texels) over the lower-face region."""
    t_b = np.linspace(-1.0, 1.0, height)
    t_a = np.linspace(-1.0, 1.0, width)
    b, a = np.meshgrid(t_b, t_a, indexing="ij")
    f = np.zeros((3, 2, height, width))
    for p in range(3):
        ca, cb = _EXPR_CENTERS[p]
        g = np.exp(-((a - ca) ** 2 + (b - cb) ** 2) / (2 * _EXPR_SIGMA ** 2))
        f[p, 0] = EXPRESSION_MAX_TEXELS * _EXPR_DIRS[p][0] * g
        f[p, 1] = EXPRESSION_MAX_TEXELS * _EXPR_DIRS[p][1] * g
    return WarpField(f)


def apply_expression(tri: Triplane, e: float, threads: int = 1) -> Triplane:
    if not -1.0 <= e <= 1.0:
        raise ValueError("expression parameter must lie in [-1, 1]")
    if e == 0.0:
        return tri
    return apply_warp(tri, expression_field(tri.height, tri.width).scaled(e), threads)


# -- images and cameras --------------------------------------------------------

LUMA = np.array([0.2126, 0.7152, 0.0722])


def color_augment(img: np.ndarray, a: AugmentationSpec) -> np.ndarray:
    """Brightness, contrast, saturation, hue, in that order; a single clamp at the end."""
    v = np.asarray(img, dtype=np.float64)
    if a.brightness != 0.0:
        v = v + a.brightness
    if a.contrast != 1.0:
        v = (v - 0.5) * a.contrast + 0.5
    if a.saturation != 1.0:
        y = (v @ LUMA)[..., None]
        v = y + a.saturation * (v - y)
    if a.hue % 360.0 != 0.0:
        # rotate the chroma component about the gray axis
        th = math.radians(a.hue)
        k = np.full(3, 1.0 / math.sqrt(3.0))
        m = v.mean(axis=-1, keepdims=True)
        c = v - m
        v = m + math.cos(th) * c + math.sin(th) * np.cross(k, c)
    return np.clip(v, 0.0, 1.0).astype(np.float32)


def sample_cameras(n: int, seed: int = 0, radius: float = 2.7, max_yaw: float = 60.0,
                   max_pitch: float = 15.0, focal: float = 1.2) -> list[Camera]:
    """Camera 0 is frontal; the rest are spread evenly in yaw with seeded pitch, all looking at the origin."""
    return [c for c, _, _ in _camera_rig(n, seed, radius, max_yaw, max_pitch, focal)]


def camera_angles(n: int, seed: int = 0, max_yaw: float = 60.0, max_pitch: float = 15.0):
    if n < 1:
        raise ValueError("need at least one camera")
    yaws, pitches = [0.0], [0.0]
    if n > 1:
        yaws += list(np.linspace(-max_yaw, max_yaw, n - 1))
        rng = rng_for(seed, "camera-pitch")
        pitches += list(rng.uniform(-max_pitch, max_pitch, size=n - 1))
    return [float(y) for y in yaws], [float(p) for p in pitches]


def _camera_rig(n, seed, radius, max_yaw, max_pitch, focal):
    yaws, pitches = camera_angles(n, seed, max_yaw, max_pitch)
    out = []
    for yaw, pitch in zip(yaws, pitches):
        y, p = math.radians(yaw), math.radians(pitch)
        pos = (radius * math.cos(p) * math.sin(y), radius * math.sin(p),
               radius * math.cos(p) * math.cos(y))
        out.append((Camera.look_at(pos, focal=focal), yaw, pitch))
    return out


# -- raw triplane surrogate ----------------------------------------------------

def degrade_occluded(gt: Triplane, vis: Triplane, strength: float, blur: float) -> Triplane:
    """Blend appearance channels toward a blurred copy where the input view cannot see.

    Density (channel 0) is untouched; geometry errors come from the injected warp.
    """
    if strength == 0.0:
        return gt
    v = upsample_visibility(vis, gt.height, gt.width).planes.astype(np.float64)
    planes = gt.planes.astype(np.float64)
    app = planes[:, 1:]
    blurred = gaussian_filter(app, sigma=(0, 0, blur, blur), mode="nearest")
    planes[:, 1:] = app + strength * (1.0 - v) * (blurred - app)
    return Triplane(planes.astype(np.float32))


def distortion_magnitude(spec: SceneSpec, yaw_deg: float) -> float:
    return spec.distortion_magnitude * abs(math.sin(math.radians(yaw_deg)))


# -- bundle ----------------------------------------------------------------------

class Bundle:
    """Read access to a generated dataset directory (files are loaded lazily and cached)."""

    def __init__(self, root):
        self.root = Path(root)
        spec_path = self.root / "spec.json"
        if not spec_path.is_file():
            raise TrifuseIOError(f"missing bundle file {spec_path}")
        self.spec = SceneSpec.from_dict(json.loads(spec_path.read_text()))
        cams = json.loads((self.root / "cameras.json").read_text())
        self.cameras = [Camera.from_vector(c["vector"]) for c in cams["cameras"]]
        self.yaws = [c["yaw"] for c in cams["cameras"]]
        self._cache: dict = {}

    @property
    def frames(self) -> int:
        return self.spec.frames

    @property
    def views(self) -> int:
        return self.spec.views

    @property
    def render_config(self) -> RenderConfig:
        return self.spec.render_config

    def _load(self, key, fn, path):
        if key not in self._cache:
            if not path.is_file():
                raise TrifuseIOError(f"missing bundle file {path}")
            self._cache[key] = fn(path)
        return self._cache[key]

    def gt_triplane(self, t: int) -> Triplane:
        return self._load(("gt", t), load_triplane, self.root / "gt_triplanes" / f"f{t}.tri")

    pseudo_gt_triplane = gt_triplane

    def raw_triplane(self, t: int, i: int) -> Triplane:
        return self._load(("raw", t, i), load_triplane, self.root / "raw_triplanes" / f"f{t}_v{i}.tri")

    def distortion(self, t: int, i: int) -> WarpField:
        return self._load(("wrp", t, i), load_warp, self.root / "distortions" / f"f{t}_v{i}.wrp")

    def visibility(self, t: int, i: int) -> Triplane:
        return self._load(("vis", t, i), load_triplane, self.root / "visibility" / f"f{t}_v{i}.tri")

    def gt_image(self, t: int, j: int) -> np.ndarray:
        ext = self.spec.image_format
        return self._load(("img", t, j), read_image, self.root / "gt_images" / f"f{t}_v{j}.{ext}")

    def canonical(self) -> Triplane:
        """Canonical triplane: the raw lift of the frontal reference frame."""
        return self.raw_triplane(0, 0)

    def canonical_visibility(self) -> Triplane:
        return self.visibility(0, 0)

    def shoulder(self, t: int) -> ShoulderParams:
        return self.spec.shoulder(t)


def build_sequence(spec: SceneSpec, root, threads: int = 1) -> Bundle:
    """Generate and write a full bundle under ``root``; returns a reader for it."""
    root = Path(root)
    try:
        for sub in ("gt_triplanes", "raw_triplanes", "distortions", "gt_images", "visibility"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TrifuseIOError(f"cannot create bundle at {root}: {exc}") from exc
    cfg = spec.render_config
    ext = spec.image_format
    cano = gen_canonical_triplane(spec.seed, spec.smoothness, spec.channels, spec.resolution)
    rig = _camera_rig(spec.views, spec.seed, spec.camera_radius, spec.max_yaw, spec.max_pitch,
                      spec.focal)
    for t in range(spec.frames):
        gt = apply_expression(cano, spec.expressions[t], threads)
        save_triplane(gt, root / "gt_triplanes" / f"f{t}.tri")
        sp = spec.shoulder(t)
        for i, (cam, yaw, _) in enumerate(rig):
            tag = f"f{t}_v{i}"
            img = render(gt, cam, cfg, sp, threads=threads)
            aug = spec.augmentation(i)
            if not aug.is_identity:
                img = color_augment(img, aug)
            write_image(root / "gt_images" / f"{tag}.{ext}", img)
            vis = compute_visibility_gt(gt, cam, cfg, spec.vis_resolution, spec.vis_column_samples,
                                        spec.vis_ray_samples, threads)
            save_triplane(vis, root / "visibility" / f"{tag}.tri")
            dist = synth_distortion(spec.seed, distortion_magnitude(spec, yaw),
                                    spec.distortion_smoothness, spec.resolution, spec.resolution,
                                    stream=(t, i))
            save_warp(dist, root / "distortions" / f"{tag}.wrp")
            degraded = degrade_occluded(gt, vis, spec.occlusion_corruption, spec.smoothness)
            save_triplane(apply_warp(degraded, dist, threads), root / "raw_triplanes" / f"{tag}.tri")
    ref = render(apply_expression(cano, spec.expressions[0], threads), rig[0][0], cfg, threads=threads)
    write_image(root / "reference.png", ref)
    if ext == "pfm":
        write_image(root / "reference.pfm", ref)
    cams = {"convention": "world-from-camera 4x4 then normalized 3x3 intrinsics, row-major",
            "cameras": [{"index": i, "yaw": yaw, "pitch": pitch, "vector": cam.flatten().tolist(),
                         "extrinsics": cam.extrinsics.tolist(), "intrinsics": cam.intrinsics.tolist()}
                        for i, (cam, yaw, pitch) in enumerate(rig)]}
    (root / "cameras.json").write_text(json.dumps(cams, indent=2))
    meta = spec.to_dict()
    meta["pseudo_gt_triplanes"] = "gt_triplanes"
    (root / "spec.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return Bundle(root)
