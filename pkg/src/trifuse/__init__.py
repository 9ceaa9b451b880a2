"""Triplane undistortion, visibility-aware fusion and multi-view evaluation on synthetic scenes."""
from ._backend import BACKEND
from .errors import (
    ConvergenceError, DimensionMismatchError, FormatError, MetricUnavailableError, SchemaError,
    SingularIntrinsicsError, TrifuseError, TrifuseIOError,
)
from .evaluate import aggregates, ivv, nvs_quality, nvv, overall_quality, psnr, score_tensor, ssim
from .render import ShoulderParams, composite, generate_rays, render, warp_rays_shoulder
from .synth import Bundle, SceneSpec, build_sequence, gen_canonical_triplane
from .triplane import Camera, RenderConfig, Triplane, aggregate_features, decode, load_triplane, save_triplane
from .visfuse import compute_visibility_gt, fuse, fusion_loss, occlusion_mask, total_loss
from .warp import WarpField, apply_warp, invert_warp, synth_distortion

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Bundle", "Camera", "ConvergenceError", "DimensionMismatchError", "FormatError",
    "MetricUnavailableError", "RenderConfig", "SceneSpec", "SchemaError", "ShoulderParams",
    "SingularIntrinsicsError", "Triplane", "TrifuseError", "TrifuseIOError", "WarpField",
    "aggregate_features", "aggregates", "apply_warp", "build_sequence", "composite",
    "compute_visibility_gt", "decode", "fuse", "fusion_loss", "gen_canonical_triplane",
    "generate_rays", "invert_warp", "ivv", "load_triplane", "nvs_quality", "nvv", "occlusion_mask",
    "overall_quality", "psnr", "render", "save_triplane", "score_tensor", "ssim", "synth_distortion",
    "total_loss", "warp_rays_shoulder",
]
