"""Canvas, overlapping patch grid, and per-patch weight windows."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from .errors import GeometryError
from .manifest import format_manifest, parse_manifest

BorderPolicy = Literal["exact-tiling", "clamp-last"]
WindowKind = Literal["constant", "gaussian", "linear-ramp"]


@dataclass(frozen=True)
class CanvasSpec:
    height: int
    width: int
    channels: int = 3

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise GeometryError(f"canvas dims must be >= 1, got {self.height}x{self.width}x{self.channels}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class PatchGrid:
    canvas: CanvasSpec
    patch_h: int
    patch_w: int
    stride_y: int
    stride_x: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]
    border_policy: BorderPolicy = "clamp-last"

    @property
    def origins(self) -> list[tuple[int, int]]:
        """Top-left corners in row-major order; patch ``k`` is ``origins[k]``."""
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    def origin(self, k: int) -> tuple[int, int]:
        if not 0 <= k < len(self):
            raise IndexError(f"patch index {k} outside 0..{len(self) - 1}")
        iy, ix = divmod(k, len(self.col_origins))
        return self.row_origins[iy], self.col_origins[ix]

    def index(self, iy: int, ix: int) -> int:
        return iy * len(self.col_origins) + ix

    def axis_index(self, k: int) -> tuple[int, int]:
        return divmod(k, len(self.col_origins))

    def patch_slices(self, k: int) -> tuple[slice, slice]:
        r, c = self.origin(k)
        return slice(r, r + self.patch_h), slice(c, c + self.patch_w)

    def __iter__(self) -> Iterator[tuple[int, tuple[int, int]]]:
        return iter(enumerate(self.origins))

    def rows_covering(self, r: int) -> range:
        """Indices into ``row_origins`` whose patch spans canvas row ``r``."""
        return _axis_cover(self.row_origins, self.patch_h, r)

    def cols_covering(self, c: int) -> range:
        return _axis_cover(self.col_origins, self.patch_w, c)

    def to_manifest(self, window: "WeightWindow | None" = None, master_seed: int | None = None) -> str:
        items: dict[str, object] = {
            "canvas_height": self.canvas.height,
            "canvas_width": self.canvas.width,
            "channels": self.canvas.channels,
            "patch_h": self.patch_h,
            "patch_w": self.patch_w,
            "stride_y": self.stride_y,
            "stride_x": self.stride_x,
            "border_policy": self.border_policy,
        }
        if window is not None:
            items["window"] = window.kind
            items["sigma"] = "none" if window.sigma is None else repr(window.sigma)
        if master_seed is not None:
            items["master_seed"] = master_seed
        return format_manifest(items)

    @classmethod
    def from_manifest(cls, text: str) -> "PatchGrid":
        m = parse_manifest(text)
        canvas = CanvasSpec(int(m["canvas_height"]), int(m["canvas_width"]), int(m["channels"]))
        return build_grid(
            canvas, int(m["patch_h"]), int(m["patch_w"]), int(m["stride_y"]), int(m["stride_x"]), m["border_policy"]
        )


def _axis_cover(origins: tuple[int, ...], size: int, x: int) -> range:
    # origins are sorted; a patch at o covers [o, o + size)
    lo = bisect.bisect_right(origins, x - size)
    hi = bisect.bisect_right(origins, x)
    return range(lo, hi)


def _axis_origins(extent: int, size: int, stride: int, policy: str, axis: str) -> tuple[int, ...]:
    if size > extent:
        raise GeometryError(f"patch {axis} {size} exceeds canvas {axis} {extent}")
    if stride < 1:
        raise GeometryError(f"stride along {axis} must be positive, got {stride}")
    if stride > size:
        raise GeometryError(f"stride {stride} > patch {axis} {size} leaves uncovered gaps")
    span = extent - size
    if policy == "exact-tiling":
        if span % stride:
            raise GeometryError(
                f"exact-tiling needs ({axis} {extent} - patch {size}) divisible by stride {stride}; remainder {span % stride}"
            )
        return tuple(range(0, span + 1, stride))
    if policy == "clamp-last":
        out = list(range(0, span + 1, stride))
        if out[-1] != span:
            out.append(span)
        return tuple(out)
    raise GeometryError(f"unknown border policy {policy!r}")


def build_grid(
    canvas: CanvasSpec,
    h: int,
    w: int | None = None,
    stride_y: int | None = None,
    stride_x: int | None = None,
    border_policy: BorderPolicy = "clamp-last",
) -> PatchGrid:
    """Lay out h x w patches at the given strides so that every pixel is covered.

    ``w`` defaults to ``h``; ``stride_y`` defaults to ``h // 2``; ``stride_x``
    defaults to ``stride_y``. With ``clamp-last`` the final origin on each axis
    is pulled back so the last patch ends exactly on the border.
    """
    w = h if w is None else w
    stride_y = max(h // 2, 1) if stride_y is None else stride_y
    stride_x = stride_y if stride_x is None else stride_x
    rows = _axis_origins(canvas.height, h, stride_y, border_policy, "height")
    cols = _axis_origins(canvas.width, w, stride_x, border_policy, "width")
    return PatchGrid(canvas, h, w, stride_y, stride_x, rows, cols, border_policy)


def coverage_at(grid: PatchGrid, p: tuple[int, int]) -> set[int]:
    """Indices of every patch whose rectangle contains pixel ``p = (row, col)``."""
    r, c = p
    if not (0 <= r < grid.canvas.height and 0 <= c < grid.canvas.width):
        raise GeometryError(f"pixel {p} outside {grid.canvas.height}x{grid.canvas.width} canvas")
    return {grid.index(iy, ix) for iy in grid.rows_covering(r) for ix in grid.cols_covering(c)}


@dataclass(frozen=True)
class WeightWindow:
    kind: WindowKind
    values: np.ndarray = field(repr=False, compare=False)
    sigma: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def gaussian_values(h: int, w: int, sigma: float) -> np.ndarray:
    # offsets measured from h/2, w/2 on the integer grid, no half-pixel shift
    i = np.arange(h, dtype=np.float64)[:, None] - h / 2
    j = np.arange(w, dtype=np.float64)[None, :] - w / 2
    return np.exp(-(i * i + j * j) / (2.0 * sigma * sigma))


def _ramp(n: int) -> np.ndarray:
    i = np.arange(n)
    return (np.minimum(i, n - 1 - i) + 1.0) / ((n + 1) // 2)


def make_window(kind: WindowKind, h: int, w: int | None = None, sigma: float | None = None) -> WeightWindow:
    """Guidance weights over one patch. All values are strictly positive.

    The Gaussian kind is not renormalized; its centre is exactly 1.
    ``sigma`` defaults to a quarter of the smaller patch side.
    """
    w = h if w is None else w
    if h < 1 or w < 1:
        raise GeometryError(f"window dims must be >= 1, got {h}x{w}")
    if kind == "constant":
        values, sigma = np.ones((h, w)), None
    elif kind == "gaussian":
        sigma = min(h, w) / 4.0 if sigma is None else float(sigma)
        if sigma <= 0:
            raise GeometryError(f"gaussian sigma must be positive, got {sigma}")
        values = gaussian_values(h, w, sigma)
        if not np.all(values > 0):
            raise GeometryError(f"gaussian sigma {sigma} underflows to zero weight at the patch edge")
    elif kind == "linear-ramp":
        values, sigma = np.outer(_ramp(h), _ramp(w)), None
    else:
        raise GeometryError(f"unknown window kind {kind!r}")
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.flags.writeable = False
    return WeightWindow(kind, values, sigma)
