"""Out-of-core canvas held as fixed-size tiles on disk.

Layout::

    <root>/manifest.txt                   height, width, channels, tile_size,
                                          dtype, timestep, generation
    <root>/gen0/tile_<ty>_<tx>.bin        row-major, channel-last, little-endian
    <root>/gen1/tile_<ty>_<tx>.bin

Two generations let one timestep read Y*_t while accumulating Y*_{t-1};
``generation`` in the manifest names the one holding the current state.
Border tiles are cropped to the canvas, so every file holds exactly the
pixels of its rectangle.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import StoreError
from .manifest import disk_dtype, read_manifest, write_manifest

_N_LOCKS = 64


class TileStore:
    def __init__(self, root: str | Path, height: int, width: int, channels: int, tile_size: int, dtype: str,
                 timestep: int = 0, generation: int = 0, accounting=None):
        self.root = Path(root)
        self.height, self.width, self.channels = int(height), int(width), int(channels)
        self.tile_size = int(tile_size)
        self.dtype_name = dtype
        self.dtype = disk_dtype(dtype)
        self.timestep = int(timestep)
        self.generation = int(generation)
        self.accounting = accounting
        self._locks = [threading.Lock() for _ in range(_N_LOCKS)]

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path, height: int, width: int, channels: int, tile_size: int = 64,
               dtype: str = "float32", timestep: int = 0, accounting=None) -> "TileStore":
        if tile_size < 1:
            raise StoreError(f"tile size must be positive, got {tile_size}")
        store = cls(root, height, width, channels, tile_size, dtype, timestep, 0, accounting)
        for g in (0, 1):
            (store.root / f"gen{g}").mkdir(parents=True, exist_ok=True)
        store.write_manifest()
        return store

    @classmethod
    def open(cls, root: str | Path, accounting=None) -> "TileStore":
        root = Path(root)
        try:
            m = read_manifest(root / "manifest.txt")
            return cls(root, int(m["height"]), int(m["width"]), int(m["channels"]), int(m["tile_size"]),
                       m["dtype"], int(m["timestep"]), int(m["generation"]), accounting)
        except (OSError, KeyError, ValueError) as exc:
            raise StoreError(f"cannot open tile store at {root}: {exc}") from exc

    def write_manifest(self) -> None:
        write_manifest(self.root / "manifest.txt", {
            "height": self.height, "width": self.width, "channels": self.channels,
            "tile_size": self.tile_size, "dtype": self.dtype_name,
            "timestep": self.timestep, "generation": self.generation,
        })

    def commit(self, generation: int, timestep: int) -> None:
        self.generation, self.timestep = generation, timestep
        self.write_manifest()

    # -- geometry -----------------------------------------------------------

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self.tile_size)

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self.tile_size)

    def tile_rect(self, ty: int, tx: int) -> tuple[int, int, int, int]:
        r0, c0 = ty * self.tile_size, tx * self.tile_size
        return r0, min(r0 + self.tile_size, self.height), c0, min(c0 + self.tile_size, self.width)

    def tile_shape(self, ty: int, tx: int) -> tuple[int, int, int]:
        r0, r1, c0, c1 = self.tile_rect(ty, tx)
        return r1 - r0, c1 - c0, self.channels

    def tiles(self) -> Iterator[tuple[int, int]]:
        for ty in range(self.tiles_y):
            for tx in range(self.tiles_x):
                yield ty, tx

    def tiles_overlapping(self, r0: int, r1: int, c0: int, c1: int) -> Iterator[tuple[int, int]]:
        ts = self.tile_size
        for ty in range(r0 // ts, (r1 - 1) // ts + 1):
            for tx in range(c0 // ts, (c1 - 1) // ts + 1):
                yield ty, tx

    def tile_path(self, gen: int, ty: int, tx: int) -> Path:
        return self.root / f"gen{gen}" / f"tile_{ty:04d}_{tx:04d}.bin"

    # -- I/O ----------------------------------------------------------------

    def _track(self, nbytes: int, sign: int) -> None:
        if self.accounting is not None:
            (self.accounting.alloc if sign > 0 else self.accounting.free)("tile", nbytes)

    def read_tile(self, gen: int, ty: int, tx: int) -> np.ndarray:
        shape = self.tile_shape(ty, tx)
        path = self.tile_path(gen, ty, tx)
        try:
            data = np.fromfile(path, dtype=self.dtype)
        except OSError as exc:
            raise StoreError(f"cannot read tile {path}: {exc}") from exc
        if data.size != shape[0] * shape[1] * shape[2]:
            raise StoreError(f"tile {path} holds {data.size} values, expected {shape}")
        return data.reshape(shape)

    def write_tile(self, gen: int, ty: int, tx: int, values: np.ndarray) -> None:
        shape = self.tile_shape(ty, tx)
        if values.shape != shape:
            raise StoreError(f"tile ({ty}, {tx}) expects shape {shape}, got {values.shape}")
        path = self.tile_path(gen, ty, tx)
        try:
            np.ascontiguousarray(values, dtype=self.dtype).tofile(path)
        except OSError as exc:
            raise StoreError(f"cannot write tile {path}: {exc}") from exc

    def _lock(self, gen: int, ty: int, tx: int) -> threading.Lock:
        return self._locks[hash((gen, ty, tx)) % _N_LOCKS]

    def read_region(self, gen: int, r: int, c: int, h: int, w: int) -> np.ndarray:
        if r < 0 or c < 0 or r + h > self.height or c + w > self.width:
            raise StoreError(f"region {h}x{w} at ({r}, {c}) outside {self.height}x{self.width} store")
        out = np.empty((h, w, self.channels), dtype=self.dtype.newbyteorder("="))
        for ty, tx in self.tiles_overlapping(r, r + h, c, c + w):
            tr0, tr1, tc0, tc1 = self.tile_rect(ty, tx)
            tile = self.read_tile(gen, ty, tx)
            self._track(tile.nbytes, +1)
            a0, a1, b0, b1 = max(r, tr0), min(r + h, tr1), max(c, tc0), min(c + w, tc1)
            out[a0 - r : a1 - r, b0 - c : b1 - c] = tile[a0 - tr0 : a1 - tr0, b0 - tc0 : b1 - tc0]
            self._track(tile.nbytes, -1)
            del tile
        return out

    def add_region(self, gen: int, r: int, c: int, block: np.ndarray) -> None:
        """Read-modify-write ``block`` into every tile it overlaps, one tile lock at a time."""
        h, w = block.shape[:2]
        for ty, tx in self.tiles_overlapping(r, r + h, c, c + w):
            tr0, tr1, tc0, tc1 = self.tile_rect(ty, tx)
            a0, a1, b0, b1 = max(r, tr0), min(r + h, tr1), max(c, tc0), min(c + w, tc1)
            with self._lock(gen, ty, tx):
                tile = self.read_tile(gen, ty, tx)
                self._track(tile.nbytes, +1)
                tile[a0 - tr0 : a1 - tr0, b0 - tc0 : b1 - tc0] += block[a0 - r : a1 - r, b0 - c : b1 - c]
                self.write_tile(gen, ty, tx, tile)
                self._track(tile.nbytes, -1)
                del tile

    def fill_generation(self, gen: int, value: float = 0.0) -> None:
        for ty, tx in self.tiles():
            tile = np.full(self.tile_shape(ty, tx), value, dtype=self.dtype)
            self._track(tile.nbytes, +1)
            self.write_tile(gen, ty, tx, tile)
            self._track(tile.nbytes, -1)

    def map_tiles(self, gen: int, fn) -> None:
        """Rewrite each tile of ``gen`` in place as ``fn(tile, rect)``."""
        for ty, tx in self.tiles():
            tile = self.read_tile(gen, ty, tx)
            self._track(tile.nbytes, +1)
            self.write_tile(gen, ty, tx, fn(tile, self.tile_rect(ty, tx)))
            self._track(tile.nbytes, -1)

    def assemble(self, gen: int | None = None) -> np.ndarray:
        """Whole canvas in memory. Not part of the bounded working set."""
        gen = self.generation if gen is None else gen
        out = np.empty((self.height, self.width, self.channels), dtype=self.dtype.newbyteorder("="))
        for ty, tx in self.tiles():
            r0, r1, c0, c1 = self.tile_rect(ty, tx)
            out[r0:r1, c0:c1] = self.read_tile(gen, ty, tx)
        return out

    def load_array(self, array: np.ndarray, gen: int = 0) -> None:
        if array.shape != (self.height, self.width, self.channels):
            raise StoreError(f"array {array.shape} does not match store {self.height}x{self.width}x{self.channels}")
        for ty, tx in self.tiles():
            r0, r1, c0, c1 = self.tile_rect(ty, tx)
            self.write_tile(gen, ty, tx, array[r0:r1, c0:c1])

    def compatible_with(self, other: "TileStore") -> bool:
        return (self.height, self.width, self.channels, self.tile_size, self.dtype_name, self.timestep) == (
            other.height, other.width, other.channels, other.tile_size, other.dtype_name, other.timestep)


def merge_partials(a: str | Path, b: str | Path, out: str | Path) -> TileStore:
    """Sum two partial accumulations (disjoint patch subsets) tile by tile."""
    sa, sb = TileStore.open(a), TileStore.open(b)
    if not sa.compatible_with(sb):
        raise StoreError(
            f"stores differ: {sa.height}x{sa.width}x{sa.channels}/tile {sa.tile_size}/{sa.dtype_name}/t={sa.timestep}"
            f" vs {sb.height}x{sb.width}x{sb.channels}/tile {sb.tile_size}/{sb.dtype_name}/t={sb.timestep}"
        )
    so = TileStore.create(out, sa.height, sa.width, sa.channels, sa.tile_size, sa.dtype_name, sa.timestep)
    for ty, tx in sa.tiles():
        so.write_tile(0, ty, tx, sa.read_tile(sa.generation, ty, tx) + sb.read_tile(sb.generation, ty, tx))
    so.commit(0, sa.timestep)
    return so
