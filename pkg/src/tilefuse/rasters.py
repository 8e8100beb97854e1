"""8-bit image I/O, pixel <-> latent mapping, and low-resolution synthesis."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from PIL import Image


def to_latent(pixels: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Map 0..255 affinely onto [-1, 1]."""
    return np.asarray(pixels, dtype=dtype) / 127.5 - 1.0


def to_pixels(latent: np.ndarray) -> np.ndarray:
    return np.round((np.clip(latent, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def load_png(path: str | Path) -> np.ndarray:
    """H x W x C uint8 (grayscale comes back with C = 1)."""
    img = np.asarray(Image.open(path))
    if img.dtype != np.uint8:
        raise ValueError(f"{path}: expected an 8-bit image, got {img.dtype}")
    return img[:, :, None] if img.ndim == 2 else img


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise ValueError(f"PNG output must be uint8, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(arr)).save(path)


def degrade(hr: np.ndarray, factor: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Area-average downsample by ``factor``, then bicubic upsample back to HR size.

    Returns ``(lr, condition)`` as float64 in the input's value scale. When the
    HR size is not a multiple of ``factor`` the image is edge-padded up to the
    next multiple first, and the upsampled condition is cropped back.
    """
    if int(factor) != factor or factor < 2:
        raise ValueError(f"degradation factor must be an integer >= 2, got {factor}")
    img = np.asarray(hr, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    H, W, C = img.shape
    Hp, Wp = -(-H // factor) * factor, -(-W // factor) * factor
    if (Hp, Wp) != (H, W):
        img = np.pad(img, ((0, Hp - H), (0, Wp - W), (0, 0)), mode="edge")
    lr = img.reshape(Hp // factor, factor, Wp // factor, factor, C).mean(axis=(1, 3))
    up = cv2.resize(lr, (Wp, Hp), interpolation=cv2.INTER_CUBIC)
    if up.ndim == 2:
        up = up[:, :, None]
    cond = up[:H, :W]
    if squeeze:
        return lr[:, :, 0], cond[:, :, 0]
    return lr, cond


def upsample(lr: np.ndarray, factor: int) -> np.ndarray:
    lr = np.asarray(lr, dtype=np.float64)
    h, w = lr.shape[:2]
    up = cv2.resize(lr, (w * factor, h * factor), interpolation=cv2.INTER_CUBIC)
    return up[:, :, None] if up.ndim == 2 else up
