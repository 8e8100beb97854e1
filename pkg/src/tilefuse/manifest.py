"""Plain-text ``key: value`` manifests and flat binary rasters.

Every on-disk tensor in the package is a headerless row-major, channel-last
little-endian float file next to a manifest carrying its shape and dtype.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8", "uint8": "u1"}


def format_manifest(items: Mapping[str, object]) -> str:
    lines = []
    for key, value in items.items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ValueError(f"manifest line {lineno} has no ':' separator: {raw!r}")
        key, value = line.split(":", 1)
        out[key.strip()] = value.strip()
    return out


def write_manifest(path: str | Path, items: Mapping[str, object]) -> None:
    Path(path).write_text(format_manifest(items))


def read_manifest(path: str | Path) -> dict[str, str]:
    return parse_manifest(Path(path).read_text())


def disk_dtype(name: str) -> np.dtype:
    try:
        return np.dtype(_DTYPES[name])
    except KeyError:
        raise ValueError(f"unsupported raster dtype {name!r}") from None


def write_raster(stem: str | Path, array: np.ndarray, dtype: str = "float32", **extra: object) -> Path:
    """Write ``array`` (H x W or H x W x C) as ``<stem>.bin`` plus ``<stem>.txt``."""
    stem = Path(stem)
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"raster must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(arr, dtype=disk_dtype(dtype)).tofile(stem.with_suffix(".bin"))
    write_manifest(stem.with_suffix(".txt"), {"height": h, "width": w, "channels": c, "dtype": dtype, **extra})
    return stem.with_suffix(".bin")


def read_raster(stem: str | Path) -> np.ndarray:
    stem = Path(stem)
    if stem.suffix in (".bin", ".txt"):
        stem = stem.with_suffix("")
    meta = read_manifest(stem.with_suffix(".txt"))
    h, w, c = int(meta["height"]), int(meta["width"]), int(meta["channels"])
    dt = disk_dtype(meta["dtype"])
    data = np.fromfile(stem.with_suffix(".bin"), dtype=dt)
    if data.size != h * w * c:
        raise ValueError(f"{stem}.bin holds {data.size} values, manifest expects {h}x{w}x{c}")
    return data.reshape(h, w, c).astype(dt.newbyteorder("="))
