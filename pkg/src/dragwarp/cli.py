"""Command-line interface.

Exit codes: 0 success, 2 user/validation error (machine-readable
``{"error", "detail"}`` JSON on stderr), 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .errors import DragwarpError
from .grid import (
    DepthMap,
    DragSpec,
    FeatureGrid,
    dragspec_from_json,
    grid_to_image,
    image_to_grid,
    luminance_depth,
    mask_from_png,
    params_from_json,
    read_fgrid_file,
    write_fgrid_file,
)
from .pipeline import depth_for_grid, sample_grid, warp_grid
from .sampler import SamplerConfig


class UserError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


def _fail(code: str, detail: str) -> "UserError":
    return UserError(code, detail)


def _load_dragspec(path: str) -> DragSpec:
    spec_path = Path(path)
    if not spec_path.exists():
        raise _fail("drags_not_found", f"no drag spec at {path}")
    try:
        obj = json.loads(spec_path.read_text())
    except json.JSONDecodeError as exc:
        raise _fail("bad_drag_spec", f"drag spec is not valid JSON: {exc}")

    def load_mask(ref: str):
        mask_path = Path(ref)
        if not mask_path.is_absolute():
            mask_path = spec_path.parent / mask_path
        if not mask_path.exists():
            raise _fail("mask_not_found", f"no mask file at {mask_path}")
        return mask_from_png(mask_path.read_bytes())

    return dragspec_from_json(obj, mask_loader=load_mask)


def _load_depth(ref: str, grid: FeatureGrid) -> DepthMap:
    if ref == "auto":
        return depth_for_grid(grid, None)
    path = Path(ref)
    if not path.exists():
        raise _fail("depth_not_found", f"no depth file at {ref}")
    if path.suffix.lower() == ".png":
        return luminance_depth(image_to_grid(path.read_bytes()))
    depth_grid = read_fgrid_file(path)
    if depth_grid.depth_dim != 1:
        raise _fail("bad_depth", f"depth FGRID must have one channel, got {depth_grid.depth_dim}")
    return DepthMap(depth_grid.data[:, :, 0])


def _apply_param_overrides(spec: DragSpec, overrides: list[str]) -> DragSpec:
    if not overrides:
        return spec
    obj = {}
    for item in overrides:
        if "=" not in item:
            raise _fail("bad_param", f"--param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        obj[key] = value if value == "auto" else float(value)
    from dataclasses import replace
    return replace(spec, params=params_from_json(obj, base=spec.params))


def cmd_warp(args) -> int:
    image_path = Path(args.image)
    if not image_path.exists():
        raise _fail("image_not_found", f"no image at {args.image}")
    grid = image_to_grid(image_path.read_bytes())
    spec = _apply_param_overrides(_load_dragspec(args.drags), args.param)
    if spec.mask.bits.shape != (grid.height, grid.width):
        raise _fail("shape_mismatch", "mask shape differs from image")
    depth = _load_depth(args.depth, grid)

    result = warp_grid(grid, spec.mask, depth, spec.pairs, spec.params)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    base = out.with_suffix("") if out.suffix else out
    write_fgrid_file(base.with_suffix(".fgrd"), result.warped)
    base.with_suffix(".png").write_bytes(grid_to_image(result.warped))

    payload = {
        "diagnostics": result.diagnostics.to_dict(),
        "displacements": result.displacements,
        "outputs": {"fgrid": str(base.with_suffix(".fgrd")), "png": str(base.with_suffix(".png"))},
    }
    print(json.dumps(payload))
    return 0


def cmd_sample(args) -> int:
    config = SamplerConfig()
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise _fail("config_not_found", f"no config at {args.config}")
        try:
            config = SamplerConfig.from_json(json.loads(cfg_path.read_text()))
        except json.JSONDecodeError as exc:
            raise _fail("bad_config", f"config is not valid JSON: {exc}")

    z0_path = Path(args.z0)
    if not z0_path.exists():
        raise _fail("z0_not_found", f"no latent file at {args.z0}")
    z0 = read_fgrid_file(z0_path)

    spec = _load_dragspec(args.drags) if args.drags else None
    depth = _load_depth(args.depth, z0) if args.depth else None

    traces = []
    observer = traces.append if args.dump_attention else None
    final, start, diag = sample_grid(
        z0, config, (args.src_prompt, args.tgt_prompt),
        dragspec=spec, depth=depth, max_steps=args.steps, observer=observer,
    )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fgrid_file(out, final)

    if args.dump_attention:
        dump_dir = Path(args.dump_attention)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for trace in traces:
            for name, m in (("src", trace.map_src), ("ref", trace.map_ref), ("tgt", trace.map_tgt)):
                g = FeatureGrid(m[:, :, None].astype(np.float64))
                write_fgrid_file(dump_dir / f"step{trace.iteration:03d}_{name}.fgrd", g)

    if args.preview:
        lo, hi = final.data.min(), final.data.max()
        span = (hi - lo) or 1.0
        for c in range(final.depth_dim):
            channel = FeatureGrid(((final.data[:, :, c:c + 1] - lo) / span))
            out.with_suffix(f".c{c}.png").write_bytes(grid_to_image(channel))

    print(json.dumps({
        "start_step": start,
        "steps_run": min(start, args.steps) if args.steps is not None else start,
        "out": str(out),
        "warp_diagnostics": diag.to_dict() if diag else None,
    }))
    return 0


def cmd_depth_rescale(args) -> int:
    path = Path(args.depth)
    if not path.exists():
        raise _fail("depth_not_found", f"no depth file at {args.depth}")
    if path.suffix.lower() == ".png":
        depth = luminance_depth(image_to_grid(path.read_bytes()))
    else:
        g = read_fgrid_file(path)
        if g.depth_dim != 1:
            raise _fail("bad_depth", f"depth FGRID must have one channel, got {g.depth_dim}")
        depth = DepthMap(g.data[:, :, 0])
    try:
        h, w = (int(v) for v in args.shape.lower().split("x"))
        lo, hi = (float(v) for v in args.range.split(":"))
    except ValueError as exc:
        raise _fail("bad_arguments", f"cannot parse shape/range: {exc}")

    from .geometry import rescale_depth
    rescaled = rescale_depth(depth, (h, w), lo, hi)
    write_fgrid_file(args.out, FeatureGrid(rescaled.values[:, :, None]))
    print(json.dumps({"out": args.out, "h": h, "w": w, "min": float(rescaled.values.min()),
                      "max": float(rescaled.values.max())}))
    return 0


def cmd_schedule(args) -> int:
    config = SamplerConfig()
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise _fail("config_not_found", f"no config at {args.config}")
        config = SamplerConfig.from_json(json.loads(cfg_path.read_text()))
    print(report.schedule_text(config))
    if args.csv:
        Path(args.csv).write_text(report.schedule_csv(config))
    if args.plot:
        report.render_schedule_figure(config, args.plot)
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    bind = args.bind or os.environ.get("DRAGWARP_BIND", "127.0.0.1:8008")
    host, _, port = bind.rpartition(":")
    ttl = float(os.environ.get("DRAGWARP_TTL_SECONDS", "1800"))
    workers = int(os.environ.get("DRAGWARP_WORKERS", str(os.cpu_count() or 4)))
    serve(host or "127.0.0.1", int(port), assets_dir=args.assets, ttl_seconds=ttl, workers=workers)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dragwarp")
    sub = parser.add_subparsers(dest="command", required=True)

    p_warp = sub.add_parser("warp", help="warp an image under a drag spec")
    p_warp.add_argument("image")
    p_warp.add_argument("--drags", required=True, help="drag spec JSON path")
    p_warp.add_argument("--depth", default="auto", help="depth file (FGRID or PNG) or 'auto'")
    p_warp.add_argument("--out", required=True, help="output base path (.fgrd and .png written)")
    p_warp.add_argument("--param", action="append", default=[], help="override, e.g. --param alpha=1.0")
    p_warp.set_defaults(func=cmd_warp)

    p_sample = sub.add_parser("sample", help="run the three-branch denoising loop")
    p_sample.add_argument("--config", help="sampler config JSON")
    p_sample.add_argument("--z0", required=True, help="clean latent FGRID")
    p_sample.add_argument("--drags", help="optional drag spec JSON")
    p_sample.add_argument("--depth", help="optional depth file for the warp stage")
    p_sample.add_argument("--src-prompt", default="")
    p_sample.add_argument("--tgt-prompt", default="")
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--steps", type=int, default=None, help="cap on loop iterations")
    p_sample.add_argument("--dump-attention", help="directory for per-step attention FGRIDs")
    p_sample.add_argument("--preview", action="store_true", help="write per-channel grayscale PNGs")
    p_sample.set_defaults(func=cmd_sample)

    p_depth = sub.add_parser("depth-rescale", help="resize and range-normalize a depth map")
    p_depth.add_argument("depth")
    p_depth.add_argument("--shape", required=True, help="target HxW")
    p_depth.add_argument("--range", default="0:63", help="target lo:hi")
    p_depth.add_argument("--out", required=True)
    p_depth.set_defaults(func=cmd_depth_rescale)

    p_sched = sub.add_parser("schedule", help="print alpha_bar and eta tables")
    p_sched.add_argument("--config")
    p_sched.add_argument("--csv", help="also write the table as CSV")
    p_sched.add_argument("--plot", help="also render the curves to an image file")
    p_sched.set_defaults(func=cmd_schedule)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--bind", help="host:port (default env DRAGWARP_BIND or 127.0.0.1:8008)")
    p_serve.add_argument("--assets", help="static UI asset directory")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(json.dumps({"error": exc.code, "detail": exc.detail}), file=sys.stderr)
        return 2
    except DragwarpError as exc:
        print(json.dumps({"error": exc.code, "detail": exc.detail}), file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(json.dumps({"error": "internal_error", "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
