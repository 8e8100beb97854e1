"""In-core sampling over a fully materialized canvas.

Three modes share one reverse step per patch:

* ``independent`` - every patch runs its own chain, outputs are pasted side by side;
* ``naive``       - patch outputs are averaged with the guidance weights each step;
* ``corrected``   - the averaged residual about the weighted mean of the
  deterministic parts is rescaled by ``1 / sqrt(lambda)`` each step.

This path holds whole-canvas arrays and is the oracle for the streaming engine.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .denoisers import DenoiseRequest, Denoiser
from .errors import GeometryError, SamplingError
from .fields import NormalizationField, compute_normalization
from .geometry import CanvasSpec, PatchGrid, WeightWindow
from .manifest import write_raster
from .noise import NoiseSource
from .schedule import NoiseSchedule

Mode = Literal["independent", "naive", "corrected"]


def deterministic_component(y_t: np.ndarray, epsilon_hat: np.ndarray, schedule: NoiseSchedule, t: int) -> np.ndarray:
    alpha = schedule.alpha(t)
    gamma = schedule.gamma(t)
    if y_t.shape != epsilon_hat.shape:
        raise ValueError(f"latent {y_t.shape} and noise prediction {epsilon_hat.shape} differ")
    return (y_t - ((1.0 - alpha) / np.sqrt(1.0 - gamma)) * epsilon_hat) / np.sqrt(alpha)


def reverse_step(D: np.ndarray, sigma_target: float, z: np.ndarray, t: int) -> np.ndarray:
    """y_{t-1} = D + sigma * z; the last step (t == 1) adds no noise."""
    if t == 1:
        return D.copy()
    if D.shape != z.shape:
        raise ValueError(f"deterministic part {D.shape} and noise {z.shape} differ")
    return D + sigma_target * z


def naive_fuse(
    patch_outputs: Sequence[np.ndarray], grid: PatchGrid, window: WeightWindow, field: NormalizationField
) -> np.ndarray:
    """Weighted average of overlapping patch values, sum_k w_k y_k / W."""
    if len(patch_outputs) != len(grid):
        raise ValueError(f"{len(patch_outputs)} patch outputs for a {len(grid)}-patch grid")
    dtype = np.result_type(*[p.dtype for p in patch_outputs[:1]], np.float32)
    acc = np.zeros(grid.canvas.shape, dtype=dtype)
    wv = window.values[:, :, None].astype(dtype)
    for k, out in enumerate(patch_outputs):
        rs, cs = grid.patch_slices(k)
        acc[rs, cs] += wv * out
    return acc / field.Wmap[:, :, None].astype(dtype)


def corrected_project(Y: np.ndarray, mean_field: np.ndarray, lambda_field: np.ndarray) -> np.ndarray:
    """Rescale the residual about ``mean_field`` by 1/sqrt(lambda) to undo variance erosion."""
    lam = np.asarray(lambda_field)
    assert np.all(lam > 0), "erosion factor must be positive everywhere"
    if lam.ndim == Y.ndim - 1:
        lam = lam[..., None]
    return (Y - mean_field) / np.sqrt(lam).astype(Y.dtype) + mean_field


def patch_step(
    k: int,
    origin: tuple[int, int],
    y_t: np.ndarray,
    condition: np.ndarray,
    schedule: NoiseSchedule,
    t: int,
    denoiser: Denoiser,
    noise: NoiseSource,
) -> tuple[np.ndarray, np.ndarray]:
    """One patch's reverse step: returns (deterministic part D, y_{t-1})."""
    try:
        resp = denoiser(DenoiseRequest(condition, y_t, schedule.gamma(t), patch=k, origin=origin))
    except Exception as exc:
        raise SamplingError(f"denoiser failed: {exc}", stage="denoise", patch=k, timestep=t) from exc
    eps = np.asarray(resp.epsilon_hat)
    if eps.shape != y_t.shape:
        raise SamplingError(f"denoiser returned shape {eps.shape} for {y_t.shape}", stage="denoise", patch=k, timestep=t)
    if not np.all(np.isfinite(eps)):
        raise SamplingError("denoiser returned non-finite values", stage="denoise", patch=k, timestep=t)
    eps = eps.astype(y_t.dtype, copy=False)
    D = deterministic_component(y_t, eps, schedule, t)
    if t == 1:
        return D, D.copy()
    h, w, c = y_t.shape
    z = noise.patch_noise(k, t, h, w, c).astype(y_t.dtype)
    return D, reverse_step(D, schedule.sigma(t), z, t)


def _check_condition(condition: np.ndarray | None, canvas: CanvasSpec, dtype) -> np.ndarray:
    if condition is None:
        return np.zeros(canvas.shape, dtype=dtype)
    condition = np.asarray(condition, dtype=dtype)
    if condition.shape != canvas.shape:
        raise GeometryError(f"condition shape {condition.shape} does not match canvas {canvas.shape}")
    return condition


def _snapshot(snapshot_dir, snapshot_every: int, t_prev: int, Y: np.ndarray) -> None:
    if snapshot_dir is not None and snapshot_every and t_prev % snapshot_every == 0:
        dt = "float64" if Y.dtype == np.float64 else "float32"
        write_raster(Path(snapshot_dir) / f"step_{t_prev:05d}", Y, dtype=dt, timestep=t_prev)


def run_reference_chain(
    canvas: CanvasSpec,
    grid: PatchGrid,
    window: WeightWindow,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    noise: NoiseSource,
    mode: Mode = "corrected",
    *,
    condition: np.ndarray | None = None,
    dtype=np.float64,
    workers: int = 1,
    snapshot_dir: str | Path | None = None,
    snapshot_every: int = 0,
) -> np.ndarray:
    """Run the full reverse chain T..1 and return the final latent clipped to [-1, 1].

    ``condition`` is the upsampled low-resolution canvas in [-1, 1]; patches
    crop it at their origin. The initial latent is drawn once per canvas pixel.
    """
    if grid.canvas != canvas:
        raise GeometryError(f"grid was built for {grid.canvas}, not {canvas}")
    if mode not in ("independent", "naive", "corrected"):
        raise ValueError(f"unknown reference mode {mode!r}")
    dtype = np.dtype(dtype)
    cond = _check_condition(condition, canvas, dtype)
    Y = noise.canvas_noise(*canvas.shape).astype(dtype)

    if mode == "independent":
        if (grid.stride_y, grid.stride_x) != (grid.patch_h, grid.patch_w) or grid.border_policy != "exact-tiling":
            raise GeometryError("independent mode needs an exact-tiling grid with stride equal to the patch size")
        return np.clip(_run_independent(grid, schedule, denoiser, noise, Y, cond), -1.0, 1.0)

    field = compute_normalization(grid, window)
    lam = field.erosion_map()
    origins = grid.origins
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(schedule.T, 0, -1):

            def step(k: int):
                rs, cs = grid.patch_slices(k)
                return patch_step(k, origins[k], Y[rs, cs], cond[rs, cs], schedule, t, denoiser, noise)

            results = list(pool.map(step, range(len(grid)))) if pool else [step(k) for k in range(len(grid))]
            Ds = [r[0] for r in results]
            ys = [r[1] for r in results]
            Y = naive_fuse(ys, grid, window, field)
            if mode == "corrected":
                Y = corrected_project(Y, naive_fuse(Ds, grid, window, field), lam)
            _snapshot(snapshot_dir, snapshot_every, t - 1, Y)
    finally:
        if pool:
            pool.shutdown()
    return np.clip(Y, -1.0, 1.0)


def _run_independent(grid, schedule, denoiser, noise, Y, cond) -> np.ndarray:
    out = np.empty_like(Y)
    for k, origin in grid:
        rs, cs = grid.patch_slices(k)
        y = Y[rs, cs].copy()
        c = cond[rs, cs]
        for t in range(schedule.T, 0, -1):
            _, y = patch_step(k, origin, y, c, schedule, t, denoiser, noise)
        out[rs, cs] = y
    return out
