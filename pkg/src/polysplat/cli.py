"""Command-line entry point: ``polysplat {fit,render,compare,bench,synth}``.

Exit codes: 0 ok, 1 runtime or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from polysplat.errors import ConfigError, PolysplatError
from polysplat.kernels import (
    CullingMode,
    FitConfig,
    KernelSpec,
    extended_fit_range_xmax,
    fit_polynomial,
    load_kernel,
    save_kernel,
)
from polysplat.metrics import ablation, cfg_label, compare, named_kernel, rows_to_csv
from polysplat.projection import DEFAULT_DILATION
from polysplat.raster import RasterConfig, render
from polysplat.scene_io import (
    SCENE_KINDS,
    generate_synthetic_scene,
    load_cameras,
    load_ply,
    save_cameras,
    synthetic_cameras,
    write_ply,
    write_png,
)


class UsageError(Exception):
    pass


def _epsilon(text: str) -> float:
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from exc
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 1)")
    return value


def _rgb(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background needs one or three comma-separated values")
    return tuple(parts)


def parse_kernel_arg(token: str) -> KernelSpec:
    try:
        return named_kernel(token)
    except KeyError:
        return load_kernel(token)


def parse_cell(token: str) -> tuple[KernelSpec, CullingMode]:
    kernel, _, mode = token.rpartition(",")
    if not kernel:
        raise UsageError(f"expected <kernel>,<culling>, got {token!r}")
    try:
        culling = CullingMode(mode)
    except ValueError as exc:
        raise UsageError(f"unknown culling mode {mode!r}") from exc
    return parse_kernel_arg(kernel), culling


def load_scene_and_cameras(args):
    """``--scene`` is a PLY path or ``synthetic:<kind>[:<seed>]``."""
    if args.scene.startswith("synthetic:"):
        parts = args.scene.split(":")
        kind = parts[1]
        if kind not in SCENE_KINDS:
            raise UsageError(f"unknown synthetic scene {kind!r}")
        scene = generate_synthetic_scene(kind, int(parts[2]) if len(parts) > 2 else 0)
        cams = load_cameras(args.cameras) if args.cameras else synthetic_cameras(kind)
    else:
        if not args.cameras:
            raise UsageError("--cameras is required for a PLY scene")
        scene = load_ply(args.scene)
        cams = load_cameras(args.cameras)
    return scene, cams


def pick_camera(cams, cam_id):
    for c in cams:
        if c.id == cam_id:
            return c
    raise UsageError(f"no camera with id {cam_id}")


def make_config(args, kernel: KernelSpec, culling: CullingMode) -> RasterConfig:
    try:
        return RasterConfig(
            kernel=kernel,
            culling=culling,
            tile_size=args.tile_size,
            epsilon=args.epsilon,
            threads=args.threads,
            v_dilation=args.v_dilation,
            background=args.background,
            clamp_before_blend=getattr(args, "clamp_before_blend", False),
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    override = None
    if args.extended_range:
        s_min = args.s_min if args.s_min is not None else math.sqrt(DEFAULT_DILATION)
        override = extended_fit_range_xmax(args.tile_size, s_min, args.epsilon)
    try:
        cfg = FitConfig(
            order=args.order,
            epsilon=args.epsilon,
            sample_count=args.sample_count,
            iterations=args.iterations,
            x_max_override=override,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    res = fit_polynomial(cfg)
    kernel = res.kernel.as_piecewise() if args.piecewise else res.kernel
    if args.out:
        save_kernel(args.out, kernel, res.epsilon, res.fit_range)
    print(f"order        {kernel.order}")
    print(f"kind         {kernel.kind.value}")
    print(f"fit range    {res.fit_range:.6f}")
    for i, c in enumerate(kernel.coeffs):
        print(f"c{i:<11d} {c:.9f}")
    print(f"first root   {kernel.first_root:.6f}  (radius {math.sqrt(kernel.first_root):.4f} sigma)")
    print(f"L1 loss      {res.final_l1_loss:.6g}")
    return 0


def cmd_render(args) -> int:
    scene, cams = load_scene_and_cameras(args)
    cam = pick_camera(cams, args.camera_id)
    cfg = make_config(args, parse_kernel_arg(args.kernel), CullingMode(args.culling))
    fb, counters = render(scene, cam, cfg)
    write_png(fb, args.out, cfg.background)
    if args.counters:
        Path(args.counters).write_text(json.dumps(counters.as_dict(), indent=2))
    print(json.dumps(counters.as_dict()))
    return 0


def cmd_compare(args) -> int:
    scene, cams = load_scene_and_cameras(args)
    cam = pick_camera(cams, args.camera_id)
    if args.ablate:
        base = make_config(args, KernelSpec.exponential(), CullingMode.STOPTHEPOP)
        text = rows_to_csv(ablation(scene, cam, base))
        if args.csv:
            Path(args.csv).write_text(text)
        sys.stdout.write(text)
        return 0
    if not (args.a and args.b):
        raise UsageError("compare needs --a and --b, or --ablate")
    ka, ma = parse_cell(args.a)
    kb, mb = parse_cell(args.b)
    report = compare(scene, cam, make_config(args, ka, ma), make_config(args, kb, mb))
    if args.json:
        Path(args.json).write_text(report.to_json())
    if args.csv:
        d = report.to_dict()
        flat = {k: v for k, v in d.items() if not isinstance(v, dict)}
        flat.update({f"a_{k}": v for k, v in d["counters_a"].items()})
        flat.update({f"b_{k}": v for k, v in d["counters_b"].items()})
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(flat), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in flat.items()})
        Path(args.csv).write_text(buf.getvalue())
    print(report.table())
    return 0


def cmd_bench(args) -> int:
    scene, cams = load_scene_and_cameras(args)
    if not cams:
        raise UsageError("no cameras to benchmark")
    cfg = make_config(args, parse_kernel_arg(args.kernel), CullingMode(args.culling))
    cfg_b = None
    if args.vs:
        kb, mb = parse_cell(args.vs)
        cfg_b = make_config(args, kb, mb)

    rows = []
    for cam in cams:
        t0 = time.perf_counter()
        _, c = render(scene, cam, cfg)
        row = {"camera": cam.id, "tile_pairs": c.tile_pairs_after_tight_test,
               "kernel_evaluations": c.kernel_evaluations, "fragments_blended": c.fragments_blended,
               "wall_ms": 1e3 * (time.perf_counter() - t0)}
        if cfg_b is not None:
            _, cb = render(scene, cam, cfg_b)
            row["tile_pairs_vs"] = cb.tile_pairs_after_tight_test
            row["pair_ratio"] = c.tile_pairs_after_tight_test / max(cb.tile_pairs_after_tight_test, 1)
        rows.append(row)

    pairs = np.array([r["tile_pairs"] for r in rows], dtype=np.float64)
    summary = {
        "config": cfg_label(cfg),
        "cameras": len(rows),
        "tile_pairs_mean": float(pairs.mean()),
        "tile_pairs_min": int(pairs.min()),
        "tile_pairs_max": int(pairs.max()),
        "wall_ms_mean": float(np.mean([r["wall_ms"] for r in rows])),
    }
    if cfg_b is not None:
        summary["vs"] = cfg_label(cfg_b)
        summary["aggregate_pair_ratio"] = float(pairs.sum() / max(sum(r["tile_pairs_vs"] for r in rows), 1))

    names = list(rows[0])
    print(",".join(names))
    for r in rows:
        print(",".join(f"{r[k]:.3f}" if isinstance(r[k], float) else str(r[k]) for k in names))
    for k, v in summary.items():
        print(f"# {k}: {v}")
    if args.json:
        Path(args.json).write_text(json.dumps({"rows": rows, "summary": summary}, indent=2))
    return 0


def cmd_synth(args) -> int:
    scene = generate_synthetic_scene(args.kind, args.seed)
    write_ply(scene, args.out_scene)
    save_cameras(synthetic_cameras(args.kind, args.count), args.out_cameras)
    print(f"wrote {len(scene)} splats to {args.out_scene} and {args.count} cameras to {args.out_cameras}")
    return 0


# ---------------------------------------------------------------------------


def _render_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="PLY path or synthetic:<kind>[:<seed>]")
    p.add_argument("--cameras", help="camera JSON (optional for synthetic scenes)")
    p.add_argument("--camera-id", type=int, default=0)
    p.add_argument("--tile-size", type=int, default=16)
    p.add_argument("--epsilon", type=_epsilon, default=1.0 / 255.0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (fallback: POLYSPLAT_THREADS)")
    p.add_argument("--v-dilation", type=float, default=DEFAULT_DILATION)
    p.add_argument("--background", type=_rgb, default=(1.0, 1.0, 1.0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polysplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a ReLU-polynomial kernel to exp(-x/2)")
    p.add_argument("--order", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--epsilon", type=_epsilon, default=1.0 / 255.0)
    p.add_argument("--extended-range", action="store_true", help="fit up to the tile-culling worst case")
    p.add_argument("--tile-size", type=float, default=16.0)
    p.add_argument("--s-min", type=float, default=None, help="smallest splat scale in pixels (default sqrt(0.3))")
    p.add_argument("--sample-count", type=int, default=4096)
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--piecewise", action="store_true", help="store as the zero-past-first-root variant")
    p.add_argument("--out", help="kernel file to write")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render one camera to PNG")
    _render_options(p)
    p.add_argument("--kernel", default="exp", help="kernel file or exp|f1|f2|f2p|f3")
    p.add_argument("--culling", choices=[m.value for m in CullingMode], default="stp")
    p.add_argument("--out", required=True)
    p.add_argument("--counters", help="write perf counters JSON here")
    p.add_argument("--clamp-before-blend", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("compare", help="compare two kernel/culling configs, or run the ablation grid")
    _render_options(p)
    p.add_argument("--a", help="reference <kernel>,<culling>")
    p.add_argument("--b", help="candidate <kernel>,<culling>")
    p.add_argument("--ablate", action="store_true")
    p.add_argument("--json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="perf counters over all cameras")
    _render_options(p)
    p.add_argument("--kernel", default="f1")
    p.add_argument("--culling", choices=[m.value for m in CullingMode], default="opacity")
    p.add_argument("--vs", help="second <kernel>,<culling> for pair ratios")
    p.add_argument("--json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a bundled synthetic scene and its cameras")
    p.add_argument("--kind", choices=SCENE_KINDS, default="grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--out-scene", required=True)
    p.add_argument("--out-cameras", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"polysplat: error: {exc}", file=sys.stderr)
        return 2
    except (PolysplatError, OSError) as exc:
        print(f"polysplat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
