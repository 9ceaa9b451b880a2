"""``trifuse`` command line: gen, render, distort, undistort, fuse, eval, report.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import TrifuseError, TrifuseIOError
from .evaluate import (
    RECONSTRUCTORS, aggregates, format_table, get_metric, load_report, make_reconstructor,
    score_tensors, write_report,
)
from .imageio import write_image
from .render import ShoulderParams, render
from .synth import Bundle, SceneSpec, build_sequence
from .triplane import Camera, RenderConfig, load_triplane, save_triplane
from .warp import apply_warp, invert_warp, load_warp, save_warp, synth_distortion

log = logging.getLogger("trifuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


METRIC_NAMES = ("psnr", "l1", "ssim", "id", "expr")
RECON_ALIASES = {"oracle-undistort": "undistort"}


def _metric_list(text: str) -> list[str]:
    names = [m.strip().lower() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRIC_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown metric {','.join(bad) or text!r}")
    return names


def _recon_name(text: str) -> str:
    return RECON_ALIASES.get(text, text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of flag defaults; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="kernel threads (results do not depend on it)")
    p.add_argument("--image-format", choices=("png", "pfm"), default="pfm")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trifuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic multi-view sequence bundle")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--resolution", type=int, default=128, help="triplane height/width")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--render-size", type=int, default=128)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--distortion-magnitude", type=float, default=4.0)
    p.add_argument("--augment", action="store_true", help="per-view color augmentation of GT images")

    p = sub.add_parser("render", help="volume-render a triplane")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--triplane", type=Path)
    p.add_argument("--bundle", type=Path)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--view", type=int, default=0, help="bundle camera index")
    p.add_argument("--camera", type=Path, help="JSON file holding a 25-vector")
    p.add_argument("--render-size", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--shoulder-offset", type=float, nargs=3)

    p = sub.add_parser("distort", help="inject a seeded smooth distortion into a triplane")
    _common(p)
    p.add_argument("--triplane", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--field-out", type=Path, required=True)
    p.add_argument("--magnitude", type=float, default=4.0)
    p.add_argument("--smoothness", type=float, default=32.0)

    p = sub.add_parser("undistort", help="undistort a raw triplane")
    _common(p)
    p.add_argument("--triplane", type=Path, required=True)
    p.add_argument("--field", type=Path, help="injected distortion (required by the oracle)")
    p.add_argument("--method", choices=("oracle", "identity"), default="oracle")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fuse", help="reconstruct one frame from one input view of a bundle")
    _common(p)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--input-view", type=int, default=0)
    p.add_argument("--reconstructor", type=_recon_name, choices=tuple(RECONSTRUCTORS), default="undistort+fuse")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score a reconstructor over every input/evaluation view pair")
    _common(p)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--metric", action="append", type=_metric_list, metavar="{psnr,l1,ssim}",
                   help="repeatable or comma separated (default: psnr); id/expr are registered but unavailable")
    p.add_argument("--reconstructor", type=_recon_name, choices=tuple(RECONSTRUCTORS), default="undistort+fuse")
    p.add_argument("--out", type=Path, required=True, help="report directory")

    p = sub.add_parser("report", help="summarize an existing JSON report")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--config", type=Path)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices
    if path is None or command not in choices:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise TrifuseIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in cfg.items():
        dest = k.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise UsageError(f"unknown config key {k!r} for '{command}'")
        act = actions[dest]
        if isinstance(v, list) and act.nargs is None and not isinstance(act, argparse._AppendAction):
            raise UsageError(f"config key {k!r} takes a single value")
        if act.type is not None and isinstance(v, str):
            try:
                v = act.type(v)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {k!r}: {exc}") from exc
        if isinstance(act, argparse._AppendAction):
            v = [_metric_list(m) if isinstance(m, str) else m for m in (v if isinstance(v, list) else [v])]
        if act.choices is not None and v not in act.choices:
            raise UsageError(f"config key {k!r}: {v!r} not in {sorted(act.choices)}")
        defaults[dest] = v
    sub.set_defaults(**defaults)
    # flags supplied by the config no longer have to appear on the command line
    for dest in defaults:
        actions[dest].required = False
    args = parser.parse_args(argv)
    # an explicit --metric replaces the config list instead of extending it
    if "metric" in defaults and any(t == "--metric" or t.startswith("--metric=") for t in argv):
        args.metric = args.metric[len(defaults["metric"]):]
    return args


def _render_cfg(base: RenderConfig, size: int | None, samples: int | None) -> RenderConfig:
    d = base.to_dict()
    if size is not None:
        d["width"] = d["height"] = size
    if samples is not None:
        d["samples"] = samples
    return RenderConfig.from_dict(d)


def cmd_gen(args) -> int:
    if args.views < 2:
        raise UsageError("--views must be >= 2 (one input view plus novel views)")
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    rc = RenderConfig(width=args.render_size, height=args.render_size, samples=args.samples)
    spec = SceneSpec(seed=args.seed, frames=args.frames, views=args.views, resolution=args.resolution,
                     channels=args.channels, render=rc.to_dict(), augment=args.augment,
                     distortion_magnitude=args.distortion_magnitude, image_format=args.image_format)
    build_sequence(spec, args.out, threads=args.threads)
    print(json.dumps(spec.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    sp = ShoulderParams(tuple(args.shoulder_offset)) if args.shoulder_offset else None
    if args.bundle is not None:
        b = Bundle(args.bundle)
        tri = load_triplane(args.triplane) if args.triplane else b.gt_triplane(args.frame)
        cam = b.cameras[args.view]
        base = b.render_config
        if sp is None:
            sp = b.shoulder(args.frame)
    elif args.triplane is not None and args.camera is not None:
        tri = load_triplane(args.triplane)
        cam = Camera.from_vector(json.loads(args.camera.read_text()))
        base = RenderConfig()
    else:
        raise UsageError("render needs --bundle, or both --triplane and --camera")
    img = render(tri, cam, _render_cfg(base, args.render_size, args.samples), sp, threads=args.threads)
    out = args.out
    if out.suffix not in (".png", ".pfm"):
        out = out.with_suffix("." + args.image_format)
    write_image(out, img)
    print(out)
    return EXIT_OK


def cmd_distort(args) -> int:
    tri = load_triplane(args.triplane)
    w = synth_distortion(args.seed, args.magnitude, args.smoothness, tri.height, tri.width)
    save_warp(w, args.field_out)
    save_triplane(apply_warp(tri, w, args.threads), args.out)
    return EXIT_OK


def cmd_undistort(args) -> int:
    raw = load_triplane(args.triplane)
    if args.method == "identity":
        out = raw
    else:
        if args.field is None:
            raise UsageError("the oracle undistorter needs --field")
        out = apply_warp(raw, invert_warp(load_warp(args.field), args.iterations), args.threads)
    save_triplane(out, args.out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    b = Bundle(args.bundle)
    if not (0 <= args.frame < b.frames and 0 <= args.input_view < b.views):
        raise UsageError("frame or input view out of range for this bundle")
    tri = make_reconstructor(args.reconstructor, args.threads)(b, args.frame, args.input_view)
    save_triplane(tri, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    names = [m for group in (args.metric or [["psnr"]]) for m in group]
    metrics = [get_metric(m) for m in dict.fromkeys(names)]
    b = Bundle(args.bundle)
    recon = make_reconstructor(args.reconstructor, args.threads)
    tensors = score_tensors(recon, b, metrics, threads=args.threads)
    rows = {}
    for name, S in tensors.items():
        aggs = aggregates(S)
        rows[name] = aggs
        write_report(S, args.out / f"{args.reconstructor}_{name}", aggs, {
            "reconstructor": args.reconstructor, "bundle_spec_hash": b.spec.digest(),
            "bundle": str(b.root.name)})
    print(f"reconstructor: {args.reconstructor}")
    print(format_table(rows))
    return EXIT_OK


def cmd_report(args) -> int:
    S, aggs, meta = load_report(args.report)
    T, N, _ = S.values.shape
    print(f"report: {args.report}")
    print(f"reconstructor: {meta.get('reconstructor', '?')}  frames: {T}  views: {N}")
    print(format_table({S.metric: aggs}))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "render": cmd_render, "distort": cmd_distort, "undistort": cmd_undistort,
            "fuse": cmd_fuse, "eval": cmd_eval, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"trifuse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrifuseError, ValueError, OSError, KeyError, IndexError) as exc:
        print(f"trifuse: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"trifuse: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
