"""Compiled vs numpy kernel timings.

    python3 bench/bench_kernels.py [--repeat 3] [--threads 1]

Prints best-of-N wall time per kernel for both backends, the speedup, and the max
absolute difference between their outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from trifuse import _backend
from trifuse.render import generate_rays
from trifuse.synth import gen_canonical_triplane
from trifuse.triplane import Camera, RenderConfig
from trifuse.warp import synth_distortion


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(threads: int):
    tri = gen_canonical_triplane(0, channels=8, resolution=128)
    cfg = RenderConfig(width=128, height=128, samples=64)
    cam = Camera.look_at((0.8, 0.2, 2.5), (0, 0, 0))
    rays = generate_rays(cam, cfg)
    o = np.ascontiguousarray(rays.origins.reshape(-1, 3), dtype=np.float64)
    d = np.ascontiguousarray(rays.directions.reshape(-1, 3), dtype=np.float64)
    bg = np.asarray(cfg.background, dtype=np.float64)
    planes = np.ascontiguousarray(tri.planes)
    field = synth_distortion(0, 4.0, 32.0, 128, 128).field
    dens = np.ascontiguousarray(planes[:, :1])
    pos = np.asarray(cam.position, dtype=np.float64)
    return {
        "render 128x128x64": lambda k: k.render_rays(planes, o, d, cfg.near, cfg.far, cfg.samples,
                                                     cfg.half_extent, cfg.density_scale, bg, threads)[0],
        "warp 3x8x128x128": lambda k: k.warp_planes(planes, field, threads),
        "visibility 64^2 x16x16": lambda k: k.visibility(dens, pos, 64, 16, 16, cfg.half_extent,
                                                         cfg.density_scale, 1e-6, threads),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    try:
        cy = _backend.get("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    py = _backend.get("python")
    print(f"{'kernel':<26}{'cython s':>10}{'numpy s':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, fn in _cases(args.threads).items():
        tc, a = _best(lambda: fn(cy), args.repeat)
        tp, b = _best(lambda: fn(py), args.repeat)
        diff = float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))
        print(f"{name:<26}{tc:>10.3f}{tp:>10.3f}{tp / tc:>8.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
