"""Gaussian-weighted sliding-window blending of patch probability maps."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GeometryError
from .geometry import gaussian_values
from .manifest import read_manifest, read_raster, write_manifest, write_raster


def gaussian_blend_window(S: int, sigma: float | None = None) -> np.ndarray:
    """S x S window exp(-((i - S/2)^2 + (j - S/2)^2) / (2 sigma^2)); sigma defaults to S/4."""
    if S < 1:
        raise ValueError(f"window size must be >= 1, got {S}")
    sigma = S / 4.0 if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return gaussian_values(S, S, sigma)


class BlendAccumulator:
    def __init__(self, height: int, width: int, classes: int):
        self.numerator = np.zeros((height, width, classes), dtype=np.float64)
        self.denominator = np.zeros((height, width), dtype=np.float64)

    def add(self, origin: tuple[int, int], pmap: np.ndarray, window: np.ndarray) -> None:
        pmap = np.asarray(pmap, dtype=np.float64)
        if pmap.ndim == 2:
            pmap = pmap[:, :, None]
        r, c = origin
        h, w, k = pmap.shape
        if k != self.numerator.shape[2]:
            raise ValueError(f"patch at {origin} has {k} classes, accumulator holds {self.numerator.shape[2]}")
        if window.shape != (h, w):
            raise ValueError(f"window {window.shape} does not match patch {h}x{w}")
        H, W = self.denominator.shape
        if r < 0 or c < 0 or r + h > H or c + w > W:
            raise GeometryError(f"patch {h}x{w} at {origin} leaves the {H}x{W} canvas")
        self.numerator[r : r + h, c : c + w] += pmap * window[:, :, None]
        self.denominator[r : r + h, c : c + w] += window

    def finalize(self) -> np.ndarray:
        gap = self.denominator <= 0
        if gap.any():
            rows, cols = np.nonzero(gap)
            raise GeometryError(
                f"{int(gap.sum())} pixels received no prediction; gap spans rows {rows.min()}..{rows.max()},"
                f" cols {cols.min()}..{cols.max()}"
            )
        return (self.numerator / self.denominator[:, :, None]).astype(np.float32)


def blend_predictions(
    patches: Iterable[tuple[tuple[int, int], np.ndarray]],
    canvas_dims: tuple[int, int],
    window: np.ndarray,
) -> np.ndarray:
    """P_final = sum_k P_k W_k / sum_k W_k, returned as H x W x K float32."""
    acc = None
    for origin, pmap in patches:
        pmap = np.asarray(pmap)
        if acc is None:
            acc = BlendAccumulator(*canvas_dims, 1 if pmap.ndim == 2 else pmap.shape[2])
        acc.add(origin, pmap, window)
    if acc is None:
        raise ValueError("no patches to blend")
    return acc.finalize()


def threshold(prob: np.ndarray, tau: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= tau).astype(np.uint8)


def write_patch_set(out_dir: str | Path, patches: Iterable[tuple[tuple[int, int], np.ndarray]]) -> Path:
    """Patch maps as rasters plus ``patches.txt`` mapping each name to its origin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for i, (origin, pmap) in enumerate(patches):
        name = f"patch_{i:05d}"
        write_raster(out / name, pmap)
        index[name] = f"{origin[0]} {origin[1]}"
    write_manifest(out / "patches.txt", index)
    return out


def read_patch_set(in_dir: str | Path) -> list[tuple[tuple[int, int], np.ndarray]]:
    d = Path(in_dir)
    out = []
    for name, origin in read_manifest(d / "patches.txt").items():
        r, c = (int(v) for v in origin.split())
        out.append(((r, c), read_raster(d / name)))
    return out
