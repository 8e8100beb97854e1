"""End-to-end run of one configuration: load, condition, sample, write."""

from __future__ import annotations

import shlex
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .config import RunConfig
from .denoisers import ExternalDenoiser, OracleExactNoise, ZeroDenoiser
from .geometry import CanvasSpec, build_grid, make_window
from .mda import run_streaming_chain
from .noise import NoiseSource
from .rasters import degrade, load_png, save_png, to_latent, to_pixels, upsample
from .reference import run_reference_chain
from .scenes import toy_scene
from .schedule import build_linear_schedule


def load_inputs(cfg: RunConfig) -> tuple[np.ndarray | None, np.ndarray]:
    """(ground truth pixels or None, condition pixels as float64)."""
    img = toy_scene(cfg.toy_size) if cfg.input == "toy" else load_png(cfg.input)
    if cfg.input_kind == "hr":
        _, cond = degrade(img, cfg.factor)
        return img, cond
    return None, upsample(img, cfg.factor)


def patch_order(cfg: RunConfig, n: int) -> list[int] | None:
    if cfg.patch_order == "raster":
        return None
    if cfg.patch_order == "reverse":
        return list(range(n - 1, -1, -1))
    return [int(k) for k in np.random.default_rng(cfg.order_seed).permutation(n)]


def execute(cfg: RunConfig) -> dict:
    """Run ``cfg`` and write the output PNG plus ``<output>.run.txt``; returns a summary."""
    cfg.validate()
    truth, cond_px = load_inputs(cfg)
    H, W, C = cond_px.shape
    canvas = CanvasSpec(H, W, C)
    policy = "exact-tiling" if cfg.mode == "independent" else cfg.border_policy
    if cfg.mode == "independent":
        grid = build_grid(canvas, cfg.patch_h, cfg.patch_w, cfg.patch_h, cfg.patch_w, policy)
    else:
        grid = build_grid(canvas, cfg.patch_h, cfg.patch_w, cfg.stride_y, cfg.stride_x, policy)
    window = make_window(cfg.window, cfg.patch_h, cfg.patch_w, cfg.sigma)
    schedule = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    noise = NoiseSource(cfg.seed)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    condition = to_latent(cond_px, dtype)

    if cfg.denoiser == "zero":
        denoiser = ZeroDenoiser()
    elif cfg.denoiser == "oracle":
        denoiser = OracleExactNoise(to_latent(truth, dtype), drift=cfg.oracle_drift, drift_seed=cfg.oracle_drift_seed)
    else:
        denoiser = ExternalDenoiser(shlex.split(cfg.denoiser_command), timeout=cfg.denoiser_timeout,
                                    channels=cfg.workers)

    out_path = Path(cfg.output)
    snapshots = out_path.with_suffix(".snapshots") if cfg.snapshot_every else None
    summary: dict = {"mode": cfg.mode, "patches": len(grid), "canvas": f"{H}x{W}x{C}"}
    try:
        if cfg.mode == "mda":
            store_dir = Path(cfg.store) if cfg.store else Path(tempfile.mkdtemp(prefix="tilefuse-"))
            try:
                res = run_streaming_chain(
                    canvas, grid, window, schedule, denoiser, noise, store_dir,
                    condition=condition, tile_size=cfg.tile_size, dtype=cfg.dtype,
                    order=patch_order(cfg, len(grid)), deterministic=cfg.deterministic, workers=cfg.workers,
                    snapshot_dir=snapshots, snapshot_every=cfg.snapshot_every,
                )
                latent = res.assemble()
                summary.update(res.accounting.report())
            finally:
                if not cfg.store:
                    shutil.rmtree(store_dir, ignore_errors=True)
        else:
            latent = run_reference_chain(
                canvas, grid, window, schedule, denoiser, noise, cfg.mode, condition=condition, dtype=dtype,
                workers=cfg.workers, snapshot_dir=snapshots, snapshot_every=cfg.snapshot_every,
            )
    finally:
        if isinstance(denoiser, ExternalDenoiser):
            denoiser.close()

    pixels = to_pixels(latent)
    save_png(out_path, pixels)
    cfg.save(out_path.with_suffix(".run.txt"))
    summary.update({"output": str(out_path), "grid": grid, "pixels": pixels, "truth": truth})
    return summary
