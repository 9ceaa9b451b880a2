"""Multi-view evaluation: image metrics, the (frame, input view, eval view) score tensor,
its aggregates, reconstructor arms, and JSON/CSV reports."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from skimage.metrics import structural_similarity

from . import _backend
from .errors import DimensionMismatchError, MetricUnavailableError, SchemaError, TrifuseIOError
from .render import render
from .synth import LUMA, Bundle
from .triplane import RenderConfig, Triplane
from .visfuse import fuse, warp_visibility
from .warp import WarpField, apply_warp, invert_warp

PSNR_CAP = 99.0
SCHEMA = "scoretensor/1"
SUBSTITUTIONS = {
    "lpips": "not available; PSNR/L1/SSIM provided instead",
    "id": "ArcFace identity metric not available",
    "expr": "NVIDIA Maxine expression metric not available",
    "undistorter": "oracle inverse of the injected distortion replaces the learned warp predictor",
    "fuser": "visibility-weighted reference fuser replaces the learned fuser",
    "visibility": "ground-truth visibility carried through the warps replaces the learned estimator",
}


# -- metrics -------------------------------------------------------------------

def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; identical images give the 99 dB cap."""
    a, b = _pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def l1_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def ssim(a, b) -> float:
    """SSIM on luminance: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1."""
    a, b = _pair(a, b)
    return float(structural_similarity(
        luminance(a), luminance(b), data_range=1.0, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, K1=0.01, K2=0.03))


@dataclass(frozen=True)
class Metric:
    name: str
    fn: Callable | None
    higher_is_better: bool
    missing: str | None = None

    def __call__(self, rendered, gt) -> float:
        if self.fn is None:
            raise MetricUnavailableError(f"metric {self.name!r} needs {self.missing}, which is not available")
        return self.fn(rendered, gt)


METRICS: dict[str, Metric] = {
    "psnr": Metric("psnr", psnr, True),
    "l1": Metric("l1", l1_metric, False),
    "ssim": Metric("ssim", ssim, True),
    "id": Metric("id", None, False, "the ArcFace face-recognition network"),
    "expr": Metric("expr", None, False, "the NVIDIA Maxine AR SDK expression estimator"),
}


def get_metric(name: str) -> Metric:
    try:
        m = METRICS[name]
    except KeyError:
        raise MetricUnavailableError(f"unknown metric {name!r}") from None
    if m.fn is None:
        m(None, None)
    return m


# -- score tensor and aggregates -----------------------------------------------

@dataclass(eq=False)
class ScoreTensor:
    values: np.ndarray
    metric: str = "psnr"
    higher_is_better: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or min(v.shape) < 1:
            raise DimensionMismatchError(f"score tensor must be T x N x N, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("score tensor entries must be finite")
        self.values = v

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def views(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ScoreTensor):
            return NotImplemented
        return (self.metric == other.metric and self.higher_is_better == other.higher_is_better
                and np.array_equal(self.values, other.values))


def _values(S) -> np.ndarray:
    return S.values if isinstance(S, ScoreTensor) else np.asarray(S, dtype=np.float64)


def overall_quality(S) -> float:
    """Mean over all T*N*N entries, diagonal included."""
    return statistics.fmean(_values(S).ravel().tolist())


def _off_diagonal(v: np.ndarray) -> np.ndarray:
    n = v.shape[1]
    return v[:, ~np.eye(n, dtype=bool)]


def nvs_quality(S) -> float:
    """Mean over entries whose input view differs from the evaluation view."""
    v = _values(S)
    if v.shape[1] < 2:
        raise ValueError("novel-view quality needs at least 2 views")
    return statistics.fmean(_off_diagonal(v).ravel().tolist())


def _row_spread(v: np.ndarray) -> float:
    # mean over (t, i) of the population stddev of S[t, i, j != i]
    n = v.shape[1]
    spreads = []
    for t in range(v.shape[0]):
        for i in range(n):
            vals = [float(v[t, i, j]) for j in range(n) if j != i]
            spreads.append(statistics.pstdev(vals) if len(vals) > 1 else 0.0)
    return statistics.fmean(spreads)


def nvv(S) -> float:
    """Novel view variation: spread across evaluation views for a fixed input view."""
    return _row_spread(_values(S))


def ivv(S) -> float:
    """Input view variation: spread across input views for a fixed evaluation view."""
    return _row_spread(np.swapaxes(_values(S), 1, 2))


def aggregates(S) -> dict[str, float]:
    return {"s": overall_quality(S), "s_nv": nvs_quality(S), "nvv": nvv(S), "ivv": ivv(S)}


# -- reconstructors --------------------------------------------------------------

class Reconstructor(Protocol):
    name: str

    def __call__(self, bundle: Bundle, frame: int, input_view: int) -> Triplane: ...


class PerfectReconstructor:
    name = "perfect"

    def __call__(self, bundle, frame, input_view):
        return bundle.gt_triplane(frame)


class CanonicalReconstructor:
    """Ignores the input frame entirely; output is the same for every input view."""

    name = "canonical"

    def __call__(self, bundle, frame, input_view):
        return bundle.canonical()


class IdentityReconstructor:
    """No undistorter, no fuser: the raw per-frame triplane as lifted."""

    name = "identity"

    def __call__(self, bundle, frame, input_view):
        return bundle.raw_triplane(frame, input_view)


class _Arm:
    undistort = False
    fuse = False

    def __init__(self, threads: int = 1, iterations: int = 20):
        self.threads = threads
        self.iterations = iterations

    def correction(self, bundle, frame, input_view) -> WarpField:
        return invert_warp(bundle.distortion(frame, input_view), self.iterations)

    def __call__(self, bundle, frame, input_view):
        raw = bundle.raw_triplane(frame, input_view)
        dist = bundle.distortion(frame, input_view)
        # visibility of the raw lift lives in distorted texel coordinates
        vis = warp_visibility(bundle.visibility(frame, input_view), dist)
        tri = raw
        if self.undistort:
            corr = self.correction(bundle, frame, input_view)
            tri = apply_warp(raw, corr, self.threads)
            vis = warp_visibility(vis, corr)
        if self.fuse:
            tri = fuse(tri, vis, bundle.canonical(), bundle.canonical_visibility())
        return tri


class UndistortReconstructor(_Arm):
    name = "undistort"
    undistort = True


class FuseReconstructor(_Arm):
    name = "fuse"
    fuse = True


class UndistortFuseReconstructor(_Arm):
    name = "undistort+fuse"
    undistort = True
    fuse = True


RECONSTRUCTORS = {
    "identity": IdentityReconstructor,
    "undistort": UndistortReconstructor,
    "fuse": FuseReconstructor,
    "undistort+fuse": UndistortFuseReconstructor,
    "perfect": PerfectReconstructor,
    "canonical": CanonicalReconstructor,
}


def make_reconstructor(name: str, threads: int = 1) -> Reconstructor:
    cls = RECONSTRUCTORS[name]
    return cls(threads) if issubclass(cls, _Arm) else cls()


def score_tensors(recon: Reconstructor, bundle: Bundle, metrics, cfg: RenderConfig | None = None,
                  threads: int = 1, eval_order=None) -> dict[str, ScoreTensor]:
    """Fill one T x N x N tensor per metric; each cell renders the input-view reconstruction
    from an evaluation view and scores it against that view's ground truth."""
    ms = [get_metric(m) if isinstance(m, str) else m for m in metrics]
    cfg = cfg or bundle.render_config
    T, N = bundle.frames, bundle.views
    if N < 2:
        raise ValueError("score tensor needs at least 2 views")
    order = list(range(N)) if eval_order is None else list(eval_order)
    vals = {m.name: np.zeros((T, N, N)) for m in ms}
    for t in range(T):
        sp = bundle.shoulder(t)
        for i in range(N):
            tri = recon(bundle, t, i)
            gt_shape = bundle.gt_triplane(t).shape
            if tri.shape != gt_shape:
                raise DimensionMismatchError(
                    f"reconstructor {getattr(recon, 'name', recon)!r} returned {tri.shape}, expected {gt_shape}")
            for j in order:
                img = render(tri, bundle.cameras[j], cfg, sp, threads=threads)
                gt = bundle.gt_image(t, j)
                for m in ms:
                    vals[m.name][t, i, j] = m(img, gt)
    return {m.name: ScoreTensor(vals[m.name], m.name, m.higher_is_better) for m in ms}


def score_tensor(recon: Reconstructor, bundle: Bundle, metric="psnr", cfg: RenderConfig | None = None,
                 threads: int = 1, eval_order=None) -> ScoreTensor:
    name = metric if isinstance(metric, str) else metric.name
    return score_tensors(recon, bundle, [metric], cfg, threads, eval_order)[name]


# -- reports -----------------------------------------------------------------------

def report_dict(S: ScoreTensor, aggs: dict | None = None, metadata: dict | None = None) -> dict:
    meta = {"psnr_cap_db": PSNR_CAP, "substitutions": SUBSTITUTIONS, "kernel_backend": _backend.BACKEND}
    meta.update(metadata or {})
    meta["created"] = datetime.now(timezone.utc).isoformat()
    return {
        "schema": SCHEMA,
        "metric": S.metric,
        "higher_is_better": S.higher_is_better,
        "shape": list(S.values.shape),
        "tensor": S.values.tolist(),
        "aggregates": aggs if aggs is not None else aggregates(S),
        "metadata": meta,
    }


def report_hash(rep) -> str:
    """SHA-256 of the canonical report JSON with the timestamp field removed."""
    if not isinstance(rep, dict):
        rep = json.loads(Path(rep).read_text())
    rep = json.loads(json.dumps(rep))
    rep.get("metadata", {}).pop("created", None)
    return hashlib.sha256(json.dumps(rep, sort_keys=True).encode()).hexdigest()


def write_report(S: ScoreTensor, path, aggs: dict | None = None, metadata: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.csv``; returns both paths."""
    base = Path(path)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    rep = report_dict(S, aggs, metadata)
    jpath, cpath = base.with_suffix(".json"), base.with_suffix(".csv")
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        jpath.write_text(json.dumps(rep, indent=2, sort_keys=True))
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "input_view", "eval_view", "value"])
            T, N, _ = S.values.shape
            for t in range(T):
                for i in range(N):
                    for j in range(N):
                        w.writerow([t, i, j, repr(float(S.values[t, i, j]))])
    except OSError as exc:
        raise TrifuseIOError(f"cannot write report {base}: {exc}") from exc
    return jpath, cpath


def load_report(path) -> tuple[ScoreTensor, dict, dict]:
    p = Path(path)
    if not p.is_file():
        raise TrifuseIOError(f"report not found: {p}")
    try:
        rep = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(rep, dict) or rep.get("schema") != SCHEMA:
        raise SchemaError(f"{p}: unsupported schema {rep.get('schema') if isinstance(rep, dict) else None!r}")
    try:
        S = ScoreTensor(np.asarray(rep["tensor"], dtype=np.float64), rep["metric"], rep["higher_is_better"])
        aggs = {k: float(v) for k, v in rep["aggregates"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{p}: malformed report ({exc})") from exc
    return S, aggs, rep.get("metadata", {})


def format_table(rows: dict[str, dict[str, float]]) -> str:
    """Plain-text table: one row per metric with s, s_NV, NVV, IVV."""
    head = f"{'metric':<8}{'s':>12}{'s_NV':>12}{'NVV':>12}{'IVV':>12}"
    lines = [head, "-" * len(head)]
    for name, a in rows.items():
        lines.append(f"{name:<8}{a['s']:>12.4f}{a['s_nv']:>12.4f}{a['nvv']:>12.4f}{a['ivv']:>12.4f}")
    return "\n".join(lines)
