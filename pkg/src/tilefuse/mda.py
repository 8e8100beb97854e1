"""Streaming sampler: per-patch affine contributions summed into a tile store.

The corrected fusion at a pixel is a plain sum over covering patches of

    psi_k = gain_k * y_{t-1}^(k) + shift_k * D^(k)

so no global normalization happens at apply time. The canvas lives on disk
in a two-generation :class:`TileStore`; only patch-sized crops and the tiles
one patch touches are ever in core.
"""

from __future__ import annotations

import collections
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .denoisers import Denoiser
from .errors import GeometryError, SamplingError, StoreError
from .fields import coefficient_provider
from .geometry import CanvasSpec, PatchGrid, WeightWindow
from .manifest import write_raster
from .noise import NoiseSource
from .reference import patch_step
from .schedule import NoiseSchedule
from .tilestore import TileStore


class MemoryAccounting:
    """Bytes held by engine buffers, current and peak, per buffer class."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.by_class: dict[str, int] = collections.defaultdict(int)
        self.peak_by_class: dict[str, int] = collections.defaultdict(int)

    def alloc(self, cls: str, nbytes: int) -> None:
        with self._lock:
            self.current += nbytes
            self.by_class[cls] += nbytes
            self.peak = max(self.peak, self.current)
            self.peak_by_class[cls] = max(self.peak_by_class[cls], self.by_class[cls])

    def free(self, cls: str, nbytes: int) -> None:
        with self._lock:
            self.current -= nbytes
            self.by_class[cls] -= nbytes
            if self.by_class[cls] < 0 or self.current < 0:
                raise RuntimeError(f"freed more {cls} bytes than were allocated")

    @contextmanager
    def hold(self, cls: str, *arrays: np.ndarray):
        n = sum(a.nbytes for a in arrays)
        self.alloc(cls, n)
        try:
            yield
        finally:
            self.free(cls, n)

    def report(self) -> dict[str, int]:
        return {"peak": self.peak, **{f"peak_{k}": v for k, v in sorted(self.peak_by_class.items())}}


@dataclass
class PsiContribution:
    patch: int
    origin: tuple[int, int]
    values: np.ndarray = field(repr=False)


def psi_apply(y_prev: np.ndarray, D: np.ndarray, tiles, k: int, origin: tuple[int, int] | None = None) -> PsiContribution:
    """Affine contribution of patch ``k``: gain * y_prev + shift * D, elementwise."""
    gain, shift = tiles.for_patch(k)
    if y_prev.shape[:2] != gain.shape or D.shape != y_prev.shape:
        raise GeometryError(
            f"patch {k}: coefficient tile {gain.shape} does not fit patch data {y_prev.shape} / {D.shape}"
        )
    values = gain[:, :, None] * y_prev + shift[:, :, None] * D
    if origin is None:
        origin = tiles.grid.origin(k) if hasattr(tiles, "grid") else (0, 0)
    return PsiContribution(k, origin, values)


def _check_order(order: Sequence[int] | None, patches: Sequence[int]) -> list[int]:
    if order is None:
        return list(patches)
    order = [int(k) for k in order]
    if sorted(order) != sorted(patches):
        raise ValueError("patch order must be a permutation of the patches being processed")
    return order


def accumulate_step(
    grid: PatchGrid,
    window: WeightWindow,
    tiles,
    denoiser: Denoiser,
    noise: NoiseSource,
    schedule: NoiseSchedule,
    t: int,
    store: TileStore,
    *,
    condition: TileStore | None = None,
    order: Sequence[int] | None = None,
    patches: Iterable[int] | None = None,
    deterministic: bool = True,
    workers: int = 1,
    accounting: MemoryAccounting | None = None,
) -> TileStore:
    """Advance the store from Y*_t to Y*_{t-1}.

    ``patches`` restricts the pass to a subset (partial stores for offline
    merging). With ``deterministic`` on, contributions are added in ascending
    patch index whatever ``order`` the patches are computed in, so results are
    bitwise reproducible; out-of-order results wait in a reorder buffer.
    """
    if store.timestep != t:
        raise StoreError(f"store holds timestep {store.timestep}, step expects {t}")
    if t < 1:
        raise ValueError("cannot step below t = 1")
    acct = accounting if accounting is not None else MemoryAccounting()
    store.accounting = acct
    if condition is not None:
        condition.accounting = acct
    ids = sorted(set(range(len(grid)) if patches is None else (int(k) for k in patches)))
    run_order = _check_order(order, ids)
    read_gen, write_gen = store.generation, 1 - store.generation
    store.fill_generation(write_gen, 0.0)
    h, w, C = grid.patch_h, grid.patch_w, grid.canvas.channels
    dt = store.dtype.newbyteorder("=")

    def contribute(k: int) -> PsiContribution:
        r, c = grid.origin(k)
        crop_bytes = h * w * C * dt.itemsize
        acct.alloc("patch", 2 * crop_bytes)  # latent crop + condition crop
        try:
            try:
                y_t = store.read_region(read_gen, r, c, h, w)
                cond = condition.read_region(0, r, c, h, w) if condition is not None else np.zeros((h, w, C), dt)
            except StoreError as exc:
                raise SamplingError(str(exc), stage="read", patch=k, timestep=t) from exc
            # noise prediction, D, z and y_{t-1} are crop-sized as well
            with acct.hold("patch", y_t, y_t, y_t, y_t):
                D, y_prev = patch_step(k, (r, c), y_t, cond, schedule, t, denoiser, noise)
                return psi_apply(y_prev, D, tiles, k, (r, c))
        finally:
            acct.free("patch", 2 * crop_bytes)

    def apply(contrib: PsiContribution) -> None:
        try:
            store.add_region(write_gen, *contrib.origin, contrib.values)
        except StoreError as exc:
            raise SamplingError(str(exc), stage="accumulate", patch=contrib.patch, timestep=t) from exc
        acct.free("contribution", contrib.values.nbytes)

    def produce(k: int) -> PsiContribution:
        contrib = contribute(k)
        acct.alloc("contribution", contrib.values.nbytes)
        if not deterministic:
            apply(contrib)
        return contrib

    pending: dict[int, PsiContribution] = {}
    cursor = 0

    def collect(contrib: PsiContribution) -> None:
        nonlocal cursor
        if not deterministic:
            return
        pending[contrib.patch] = contrib
        while cursor < len(ids) and ids[cursor] in pending:
            apply(pending.pop(ids[cursor]))
            cursor += 1

    if workers <= 1:
        for k in run_order:
            collect(produce(k))
    else:
        with ThreadPoolExecutor(workers) as pool:
            inflight: collections.deque = collections.deque()
            for k in run_order:
                inflight.append(pool.submit(produce, k))
                if len(inflight) >= 2 * workers:
                    collect(inflight.popleft().result())
            while inflight:
                collect(inflight.popleft().result())
    if pending:
        raise RuntimeError(f"{len(pending)} contributions never applied")
    store.commit(write_gen, t - 1)
    return store


@dataclass
class StreamingResult:
    store: TileStore
    accounting: MemoryAccounting

    def assemble(self) -> np.ndarray:
        return self.store.assemble()


def _condition_store(condition, canvas: CanvasSpec, root: Path, tile_size: int, dtype: str, acct):
    if condition is None or isinstance(condition, TileStore):
        return condition
    arr = np.asarray(condition)
    if arr.shape != canvas.shape:
        raise GeometryError(f"condition shape {arr.shape} does not match canvas {canvas.shape}")
    cs = TileStore.create(root, *canvas.shape, tile_size=tile_size, dtype=dtype, accounting=acct)
    cs.load_array(arr)
    return cs


def run_streaming_chain(
    canvas: CanvasSpec,
    grid: PatchGrid,
    window: WeightWindow,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    noise: NoiseSource,
    store_dir: str | Path,
    *,
    condition: np.ndarray | TileStore | None = None,
    tile_size: int = 64,
    dtype: str = "float32",
    order: Sequence[int] | None = None,
    deterministic: bool = True,
    workers: int = 1,
    accounting: MemoryAccounting | None = None,
    snapshot_dir: str | Path | None = None,
    snapshot_every: int = 0,
) -> StreamingResult:
    """Full chain T..1 through the tile store; the final clipped latent stays on disk.

    The initial latent is drawn tile by tile from the same per-pixel noise
    field the reference path uses, so both start from identical values.
    """
    if grid.canvas != canvas:
        raise GeometryError(f"grid was built for {grid.canvas}, not {canvas}")
    acct = accounting if accounting is not None else MemoryAccounting()
    root = Path(store_dir)
    cond = _condition_store(condition, canvas, root / "condition", tile_size, dtype, acct)
    store = TileStore.create(root / "latent", *canvas.shape, tile_size=tile_size, dtype=dtype,
                             timestep=schedule.T, accounting=acct)

    def init_tile(tile, rect):
        r0, r1, c0, c1 = rect
        return noise.field_noise(canvas.width, canvas.channels, range(r0, r1), range(c0, c1))

    store.fill_generation(0, 0.0)
    store.fill_generation(1, 0.0)
    store.map_tiles(0, init_tile)
    store.commit(0, schedule.T)

    tiles = coefficient_provider(grid, window)
    if hasattr(tiles, "tiles"):
        for gain, shift in tiles.tiles.values():
            acct.alloc("coefficients", gain.nbytes + shift.nbytes)
    else:
        acct.alloc("coefficients", 2 * window.values.nbytes)

    for t in range(schedule.T, 0, -1):
        accumulate_step(grid, window, tiles, denoiser, noise, schedule, t, store, condition=cond, order=order,
                        deterministic=deterministic, workers=workers, accounting=acct)
        if snapshot_dir is not None and snapshot_every and (t - 1) % snapshot_every == 0:
            write_raster(Path(snapshot_dir) / f"step_{t - 1:05d}", store.assemble(), dtype=dtype, timestep=t - 1)

    store.map_tiles(store.generation, lambda tile, rect: np.clip(tile, -1.0, 1.0))
    return StreamingResult(store, acct)
