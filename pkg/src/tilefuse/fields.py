"""Normalization fields and the per-patch gain/shift coefficients.

For a pixel p covered by patches Omega_p with weights w_k(p):

    W(p) = sum_k w_k(p)        S(p) = sqrt(sum_k w_k(p)^2)
    lambda(p) = (S / W)^2      (variance retained by naive averaging)
    gain_k(p) = w_k / S        shift_k(p) = w_k * (1/W - 1/S)

The coefficients only depend on which neighbours overlap a patch, so they
can be rebuilt from geometry alone for one patch at a time. On exact-tiling
grids they are also periodic and a handful of tiles covers every patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .geometry import PatchGrid, WeightWindow
from .manifest import write_manifest, write_raster


@dataclass(frozen=True)
class NormalizationField:
    Wmap: np.ndarray = field(repr=False)
    Smap: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.Wmap.shape

    def erosion_map(self) -> np.ndarray:
        return (self.Smap / self.Wmap) ** 2


def _check_window(grid: PatchGrid, window: WeightWindow) -> None:
    if window.shape != (grid.patch_h, grid.patch_w):
        raise GeometryError(f"window {window.shape} does not match patch {grid.patch_h}x{grid.patch_w}")


def compute_normalization(grid: PatchGrid, window: WeightWindow) -> NormalizationField:
    _check_window(grid, window)
    H, W = grid.canvas.height, grid.canvas.width
    wsum = np.zeros((H, W))
    sqsum = np.zeros((H, W))
    sq = window.values**2
    for k in range(len(grid)):
        rs, cs = grid.patch_slices(k)
        wsum[rs, cs] += window.values
        sqsum[rs, cs] += sq
    if not np.all(wsum > 0):
        raise GeometryError("grid leaves canvas pixels uncovered")
    return NormalizationField(wsum, np.sqrt(sqsum))


def erosion_factor(field: NormalizationField, p: tuple[int, int]) -> float:
    r, c = p
    if not (0 <= r < field.shape[0] and 0 <= c < field.shape[1]):
        raise GeometryError(f"pixel {p} outside {field.shape[0]}x{field.shape[1]} field")
    return float((field.Smap[r, c] / field.Wmap[r, c]) ** 2)


def erosion_from_weights(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(np.sum(w * w) / np.sum(w) ** 2)


def local_normalization(grid: PatchGrid, window: WeightWindow, k: int) -> tuple[np.ndarray, np.ndarray]:
    """W and S restricted to patch ``k``'s rectangle, built from its neighbours only."""
    _check_window(grid, window)
    h, w = grid.patch_h, grid.patch_w
    r0, c0 = grid.origin(k)
    iy0, iy1 = grid.rows_covering(r0)[0], grid.rows_covering(r0 + h - 1)[-1]
    ix0, ix1 = grid.cols_covering(c0)[0], grid.cols_covering(c0 + w - 1)[-1]
    wsum = np.zeros((h, w))
    sqsum = np.zeros((h, w))
    sq = window.values**2
    for iy in range(iy0, iy1 + 1):
        ry = grid.row_origins[iy]
        a0, a1 = max(ry, r0), min(ry + h, r0 + h)
        for ix in range(ix0, ix1 + 1):
            rx = grid.col_origins[ix]
            b0, b1 = max(rx, c0), min(rx + w, c0 + w)
            if a0 >= a1 or b0 >= b1:
                continue
            src = (slice(a0 - ry, a1 - ry), slice(b0 - rx, b1 - rx))
            dst = (slice(a0 - r0, a1 - r0), slice(b0 - c0, b1 - c0))
            wsum[dst] += window.values[src]
            sqsum[dst] += sq[src]
    return wsum, np.sqrt(sqsum)


def gain_shift(weights: np.ndarray, wsum: np.ndarray, ssum: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gain = weights / ssum
    shift = weights * (1.0 / wsum - 1.0 / ssum)
    return gain, shift


class DirectCoefficients:
    """Gain/shift rebuilt per patch from local geometry; works on any grid."""

    def __init__(self, grid: PatchGrid, window: WeightWindow):
        _check_window(grid, window)
        self.grid = grid
        self.window = window

    def for_patch(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        wsum, ssum = local_normalization(self.grid, self.window, k)
        return gain_shift(self.window.values, wsum, ssum)


def _axis_class(i: int, n: int, reach: int) -> tuple[int, int]:
    # how many neighbours exist before/after, capped at the overlap reach
    return min(i, reach), min(n - 1 - i, reach)


@dataclass
class CoefficientTiles:
    """Periodic gain/shift tiles keyed by border class.

    A class is ``((before_y, after_y), (before_x, after_x))``: the number of
    overlapping neighbours present on each side, capped at the overlap reach
    ``ceil(patch / stride) - 1``. The interior class has every neighbour.
    """

    grid: PatchGrid
    period: tuple[int, int]
    reach: tuple[int, int]
    tiles: dict[tuple[tuple[int, int], tuple[int, int]], tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def classes(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return sorted(self.tiles)

    @property
    def interior_class(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (self.reach[0], self.reach[0]), (self.reach[1], self.reach[1])

    def class_of(self, k: int) -> tuple[tuple[int, int], tuple[int, int]]:
        iy, ix = self.grid.axis_index(k)
        ny, nx = len(self.grid.row_origins), len(self.grid.col_origins)
        return _axis_class(iy, ny, self.reach[0]), _axis_class(ix, nx, self.reach[1])

    def for_patch(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= k < len(self.grid):
            raise GeometryError(f"patch {k} not part of the grid these tiles were built for")
        cls = self.class_of(k)
        try:
            return self.tiles[cls]
        except KeyError:
            raise GeometryError(f"no coefficient tile for class {cls} (patch {k})") from None


def precompute_coefficient_tiles(grid: PatchGrid, window: WeightWindow) -> CoefficientTiles:
    if grid.border_policy != "exact-tiling":
        raise GeometryError(
            f"coefficient tiles need an exact-tiling grid (got {grid.border_policy}); use DirectCoefficients"
        )
    _check_window(grid, window)
    reach = (math.ceil(grid.patch_h / grid.stride_y) - 1, math.ceil(grid.patch_w / grid.stride_x) - 1)
    ny, nx = len(grid.row_origins), len(grid.col_origins)
    # first patch index seen for each class is its representative
    reps: dict[tuple, int] = {}
    for iy in range(ny):
        cy = _axis_class(iy, ny, reach[0])
        for ix in range(nx):
            reps.setdefault((cy, _axis_class(ix, nx, reach[1])), grid.index(iy, ix))
    tiles = {}
    for cls, k in reps.items():
        gain, shift = gain_shift(window.values, *local_normalization(grid, window, k))
        gain.flags.writeable = False
        shift.flags.writeable = False
        tiles[cls] = (gain, shift)
    return CoefficientTiles(grid, (grid.stride_y, grid.stride_x), reach, tiles)


def coefficient_provider(grid: PatchGrid, window: WeightWindow):
    """Cached periodic tiles when the grid allows it, direct per-patch otherwise."""
    if grid.border_policy == "exact-tiling":
        return precompute_coefficient_tiles(grid, window)
    return DirectCoefficients(grid, window)


def dump_fields(field: NormalizationField, out_dir: str | Path) -> Path:
    """Write W, S and lambda as float64 rasters for visual inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lam = field.erosion_map()
    write_raster(out / "wmap", field.Wmap, dtype="float64")
    write_raster(out / "smap", field.Smap, dtype="float64")
    write_raster(out / "lambda", lam, dtype="float64")
    write_manifest(
        out / "fields.txt",
        {
            "height": field.shape[0],
            "width": field.shape[1],
            "W_min": float(field.Wmap.min()),
            "W_max": float(field.Wmap.max()),
            "S_min": float(field.Smap.min()),
            "S_max": float(field.Smap.max()),
            "lambda_min": float(lam.min()),
            "lambda_max": float(lam.max()),
        },
    )
    return out
