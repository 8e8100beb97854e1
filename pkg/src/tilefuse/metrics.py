"""Whole-scene quality metrics, seam detection, and the FID patch export."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import GeometryError
from .geometry import PatchGrid
from .manifest import format_manifest, write_manifest

FID_PATCH = 299


def _pair(reference, candidate) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: reference {a.shape} vs candidate {b.shape}")
    return a, b


def rmse_psnr(reference, candidate, max_value: float = 255.0) -> tuple[float, float]:
    """RMSE over all pixels and channels, and PSNR in dB (``inf`` when identical)."""
    a, b = _pair(reference, candidate)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 0.0, math.inf
    return math.sqrt(mse), 10.0 * math.log10(max_value**2 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def ssim(reference, candidate, window_size: int = 11, window_sigma: float = 1.5, max_value: float = 255.0) -> float:
    """Mean SSIM over the valid region with a Gaussian local window.

    Local moments are Gaussian-weighted population statistics; each channel
    is scored separately and the channel maps are averaged.
    """
    a, b = _pair(reference, candidate)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window_size}x{window_size} window")
    k = _gaussian_kernel(window_size, window_sigma)
    pad = (window_size - 1) // 2

    def blur(x):
        y = correlate1d(x, k, axis=0, mode="reflect")
        y = correlate1d(y, k, axis=1, mode="reflect")
        return y[pad : x.shape[0] - pad, pad : x.shape[1] - pad]

    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cxy = blur(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))


def boundary_lines(grid: PatchGrid) -> tuple[list[int], list[int]]:
    """Interior rows / cols where a patch starts or ends (first index past the line)."""
    H, W = grid.canvas.height, grid.canvas.width
    rows = {o for o in grid.row_origins if o > 0} | {o + grid.patch_h for o in grid.row_origins if o + grid.patch_h < H}
    cols = {o for o in grid.col_origins if o > 0} | {o + grid.patch_w for o in grid.col_origins if o + grid.patch_w < W}
    return sorted(rows), sorted(cols)


def seam_index(image, grid: PatchGrid) -> float:
    """Mean |first difference| across patch boundary lines over the same for all other pairs.

    1.0 means boundaries look like the rest of the image; a constant image
    (no differences anywhere) also scores 1.0.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[:2] != (grid.canvas.height, grid.canvas.width):
        raise GeometryError(f"image {img.shape[:2]} does not match grid canvas {grid.canvas.height}x{grid.canvas.width}")
    rows, cols = boundary_lines(grid)
    if not rows and not cols:
        raise GeometryError("grid has no interior patch boundaries")
    dv = np.abs(np.diff(img, axis=0)).mean(axis=2)  # dv[r-1] pairs rows r-1, r
    dh = np.abs(np.diff(img, axis=1)).mean(axis=2)
    vmask = np.zeros(dv.shape[0], bool)
    vmask[[r - 1 for r in rows]] = True
    hmask = np.zeros(dh.shape[1], bool)
    hmask[[c - 1 for c in cols]] = True
    seam_sum = dv[vmask].sum() + dh[:, hmask].sum()
    seam_n = dv[vmask].size + dh[:, hmask].size
    rest_sum = dv[~vmask].sum() + dh[:, ~hmask].sum()
    rest_n = dv[~vmask].size + dh[:, ~hmask].size
    seam = seam_sum / seam_n
    rest = rest_sum / rest_n if rest_n else 0.0
    if rest == 0.0:
        return 1.0 if seam == 0.0 else math.inf
    return float(seam / rest)


def _ratio(num: int, den: int, both_empty: bool) -> float:
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def segmentation_scores(pred_mask, truth_mask) -> dict[str, float]:
    """Confusion-matrix scores; empty-vs-empty counts as perfect, empty-vs-nonempty as zero."""
    p, t = np.asarray(pred_mask), np.asarray(truth_mask)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    for name, m in (("pred", p), ("truth", t)):
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} mask is not binary")
    p, t = p.astype(bool), t.astype(bool)
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    return scores_from_counts(tp, fp, fn, tn)


def scores_from_counts(tp: int, fp: int, fn: int, tn: int) -> dict[str, float]:
    both_empty = tp + fp + fn == 0
    total = tp + fp + fn + tn
    return {
        "accuracy": (tp + tn) / total if total else 1.0,
        "precision": _ratio(tp, tp + fp, both_empty),
        "recall": _ratio(tp, tp + fn, both_empty),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn, both_empty),
        "iou": _ratio(tp, tp + fp + fn, both_empty),
    }


@dataclass
class MetricReport:
    rmse: float
    psnr: float
    ssim: float
    seam_index: float | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    iou: float | None = None

    def as_dict(self) -> dict[str, float]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_text(self) -> str:
        return format_manifest(self.as_dict())

    def to_json(self) -> str:
        # json has no infinity literal; identical images report psnr as the string "inf"
        return json.dumps({k: ("inf" if v == math.inf else v) for k, v in self.as_dict().items()}, indent=2)


def evaluate(reference, candidate, max_value: float = 255.0, grid: PatchGrid | None = None) -> MetricReport:
    rmse, psnr = rmse_psnr(reference, candidate, max_value)
    rep = MetricReport(rmse, psnr, ssim(reference, candidate, max_value=max_value))
    if grid is not None:
        rep.seam_index = seam_index(candidate, grid)
    return rep


def fid_origins(extent: int, size: int = FID_PATCH, stride: int | None = None) -> list[int]:
    stride = size // 4 if stride is None else stride
    if extent < size:
        raise ValueError(f"image extent {extent} smaller than the {size}-pixel patch")
    out = list(range(0, extent - size + 1, stride))
    if out[-1] != extent - size:
        out.append(extent - size)
    return out


def fid_patch_export(image, out_dir: str | Path, size: int = FID_PATCH) -> Path:
    """Write every size x size crop at stride size // 4 (75 % overlap), borders clamped.

    Crops go out as 8-bit PNGs; ``manifest.txt`` maps file names to origins.
    """
    from PIL import Image

    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError(f"FID export expects an 8-bit image, got {img.dtype}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = fid_origins(img.shape[0], size)
    cols = fid_origins(img.shape[1], size)
    index: dict[str, object] = {"patch_size": size, "stride": size // 4, "count": len(rows) * len(cols)}
    for r in rows:
        for c in cols:
            name = f"patch_r{r:05d}_c{c:05d}.png"
            Image.fromarray(np.ascontiguousarray(img[r : r + size, c : c + size])).save(out / name)
            index[name] = f"{r} {c}"
    write_manifest(out / "manifest.txt", index)
    return out
