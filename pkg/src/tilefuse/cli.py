"""Command-line entry point: ``tilefuse <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .config import RunConfig
from .errors import SamplingError, TilefuseError
from .fields import compute_normalization, dump_fields, precompute_coefficient_tiles
from .geometry import CanvasSpec, build_grid, make_window
from .manifest import format_manifest, write_raster
from .metrics import evaluate, fid_patch_export, segmentation_scores
from .rasters import degrade, load_png, save_png
from .stitcher import blend_predictions, gaussian_blend_window, read_patch_set, threshold
from .tilestore import merge_partials


def _dims(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _add_geometry(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    d = RunConfig()
    p.add_argument("--patch", type=int, default=d.patch_h if defaults else None, help="square patch size")
    p.add_argument("--stride", type=int, default=d.stride_y if defaults else None)
    p.add_argument("--policy", choices=["clamp-last", "exact-tiling"], default=d.border_policy if defaults else None)
    p.add_argument("--window", choices=["constant", "gaussian", "linear-ramp"], default=d.window if defaults else None)
    p.add_argument("--sigma", type=float, default=None)


def cmd_plan(args) -> int:
    if args.input:
        h, w, c = load_png(args.input).shape
    else:
        (h, w), c = args.canvas, args.channels
    canvas = CanvasSpec(h, w, c)
    grid = build_grid(canvas, args.patch, args.patch, args.stride, args.stride, args.policy)
    window = make_window(args.window, args.patch, args.patch, args.sigma)
    fld = compute_normalization(grid, window)
    lam = fld.erosion_map()
    cover = np.zeros((h, w), int)
    for k in range(len(grid)):
        rs, cs = grid.patch_slices(k)
        cover[rs, cs] += 1
    report = {
        "canvas": f"{h}x{w}x{c}",
        "patches": len(grid),
        "row_origins": " ".join(map(str, grid.row_origins)),
        "col_origins": " ".join(map(str, grid.col_origins)),
        "cover_min": int(cover.min()),
        "cover_max": int(cover.max()),
        "W_min": float(fld.Wmap.min()),
        "W_max": float(fld.Wmap.max()),
        "S_min": float(fld.Smap.min()),
        "S_max": float(fld.Smap.max()),
        "lambda_min": float(lam.min()),
        "lambda_max": float(lam.max()),
    }
    if grid.border_policy == "exact-tiling":
        report["coefficient_classes"] = len(precompute_coefficient_tiles(grid, window).tiles)
    sys.stdout.write(grid.to_manifest(window, args.seed))
    sys.stdout.write(format_manifest(report))
    if args.dump:
        dump_fields(fld, args.dump)
    return 0


_RUN_FLAGS = {
    "input": "input", "input_kind": "input_kind", "factor": "factor", "toy_size": "toy_size",
    "window": "window", "sigma": "sigma", "policy": "border_policy", "T": "T", "beta_start": "beta_start",
    "beta_end": "beta_end", "denoiser": "denoiser", "denoiser_command": "denoiser_command",
    "timeout": "denoiser_timeout", "drift": "oracle_drift", "drift_seed": "oracle_drift_seed", "seed": "seed",
    "mode": "mode", "store": "store", "tile_size": "tile_size", "dtype": "dtype", "workers": "workers",
    "patch_order": "patch_order", "order_seed": "order_seed", "snapshot_every": "snapshot_every",
    "output": "output",
}


def run_config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {field: getattr(args, flag) for flag, field in _RUN_FLAGS.items() if getattr(args, flag) is not None}
    if args.patch is not None:
        changes.update(patch_h=args.patch, patch_w=args.patch)
    if args.stride is not None:
        changes.update(stride_y=args.stride, stride_x=args.stride)
    if args.nondeterministic:
        changes["deterministic"] = False
    return cfg.replace(**changes)


def cmd_run(args) -> int:
    from .pipeline import execute
    from .metrics import seam_index, rmse_psnr

    cfg = run_config_from_args(args)
    summary = execute(cfg)
    lines = {k: v for k, v in summary.items() if k not in ("grid", "pixels", "truth")}
    lines["seam_index"] = seam_index(summary["pixels"], summary["grid"])
    if summary["truth"] is not None:
        lines["psnr"] = rmse_psnr(summary["truth"], summary["pixels"])[1]
    sys.stdout.write(format_manifest(lines))
    return 0


def cmd_verify(args) -> int:
    names = list(verify_mod.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        fn = verify_mod.SUITES[name]
        res = fn(seed=args.seed) if name != "equivalence" else fn(seed=args.seed, configs=args.configs)
        print(f"== {name}: {'PASS' if res.passed else 'FAIL'}")
        for line in res.lines:
            print(line)
        ok &= res.passed
    return 0 if ok else 1


def cmd_degrade(args) -> int:
    hr = load_png(args.input)
    lr, cond = degrade(hr, args.factor)
    save_png(args.lr, np.round(np.clip(lr, 0, 255)).astype(np.uint8))
    if args.condition:
        save_png(args.condition, np.round(np.clip(cond, 0, 255)).astype(np.uint8))
    print(f"lr: {args.lr} {lr.shape[0]}x{lr.shape[1]}")
    return 0


def cmd_stitch(args) -> int:
    patches = read_patch_set(args.patches)
    size = patches[0][1].shape[0]
    window = gaussian_blend_window(size, args.sigma)
    prob = blend_predictions(patches, (args.height, args.width), window)
    write_raster(args.output, prob, dtype="float32")
    if args.mask:
        save_png(args.mask, threshold(prob[:, :, 0], args.tau) * 255)
    print(f"blended {len(patches)} patches into {args.height}x{args.width}x{prob.shape[2]}")
    return 0


def cmd_metrics(args) -> int:
    if args.metrics_cmd == "fidelity":
        ref, cand = load_png(args.reference), load_png(args.candidate)
        grid = None
        if args.patch:
            h, w, c = cand.shape
            grid = build_grid(CanvasSpec(h, w, c), args.patch, args.patch, args.stride or args.patch,
                              args.stride or args.patch, args.policy)
        rep = evaluate(ref, cand, args.max_value, grid)
        sys.stdout.write(rep.to_json() + "\n" if args.json else rep.to_text())
    elif args.metrics_cmd == "segmentation":
        pred = load_png(args.pred)[:, :, 0] > 127
        truth = load_png(args.truth)[:, :, 0] > 127
        scores = segmentation_scores(pred, truth)
        sys.stdout.write(json.dumps(scores, indent=2) + "\n" if args.json else format_manifest(scores))
    else:
        out = fid_patch_export(load_png(args.image), args.out)
        print(f"patches written to {out}")
    return 0


def cmd_merge(args) -> int:
    store = merge_partials(args.a, args.b, args.output)
    print(f"merged {args.a} + {args.b} -> {store.root} (t={store.timestep})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tilefuse", description="Tiled diffusion sampling with variance-corrected fusion")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="report the patch grid and normalization fields")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--canvas", type=_dims)
    src.add_argument("--input")
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump", help="directory for W / S / lambda rasters")
    _add_geometry(p)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("run", help="sample a canvas end to end")
    p.add_argument("--config", help="key: value run config (e.g. a previous run's .run.txt)")
    p.add_argument("--input", help="PNG path or 'toy'")
    p.add_argument("--input-kind", dest="input_kind", choices=["hr", "lr"])
    p.add_argument("--factor", type=int)
    p.add_argument("--toy-size", dest="toy_size", type=int)
    _add_geometry(p, defaults=False)
    p.add_argument("-T", "--steps", dest="T", type=int)
    p.add_argument("--beta-start", dest="beta_start", type=float)
    p.add_argument("--beta-end", dest="beta_end", type=float)
    p.add_argument("--denoiser", choices=["zero", "oracle", "external"])
    p.add_argument("--denoiser-command", dest="denoiser_command")
    p.add_argument("--timeout", type=float)
    p.add_argument("--drift", type=float, help="oracle per-patch target drift (latent units)")
    p.add_argument("--drift-seed", dest="drift_seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["independent", "naive", "corrected", "mda"])
    p.add_argument("--store")
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--workers", type=int)
    p.add_argument("--patch-order", dest="patch_order", choices=["raster", "reverse", "shuffle"])
    p.add_argument("--order-seed", dest="order_seed", type=int)
    p.add_argument("--nondeterministic", action="store_true", help="apply contributions as they finish")
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run a self-check suite")
    p.add_argument("--suite", choices=["all", *verify_mod.SUITES], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=5, help="random configs for the equivalence suite")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("degrade", help="synthesize LR and bicubic condition from an HR image")
    p.add_argument("--input", required=True)
    p.add_argument("--factor", type=int, default=5)
    p.add_argument("--lr", required=True)
    p.add_argument("--condition")
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("stitch", help="Gaussian-blend patch probability maps")
    p.add_argument("--patches", required=True, help="directory with patches.txt and patch rasters")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--mask")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("-o", "--output", required=True, help="output raster stem")
    p.set_defaults(fn=cmd_stitch)

    p = sub.add_parser("metrics", help="quality reports and FID patch export")
    msub = p.add_subparsers(dest="metrics_cmd", required=True)
    q = msub.add_parser("fidelity")
    q.add_argument("--reference", required=True)
    q.add_argument("--candidate", required=True)
    q.add_argument("--max-value", dest="max_value", type=float, default=255.0)
    q.add_argument("--patch", type=int, help="grid patch size for the seam index")
    q.add_argument("--stride", type=int)
    q.add_argument("--policy", choices=["clamp-last", "exact-tiling"], default="clamp-last")
    q.add_argument("--json", action="store_true")
    q = msub.add_parser("segmentation")
    q.add_argument("--pred", required=True)
    q.add_argument("--truth", required=True)
    q.add_argument("--json", action="store_true")
    q = msub.add_parser("fid-export")
    q.add_argument("--image", required=True)
    q.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("merge-partials", help="sum two partial tile stores")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_merge)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SamplingError as exc:
        print(f"tilefuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TilefuseError as exc:
        print(f"tilefuse {args.command}: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"tilefuse {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
