"""Procedural test scene with edges, smooth shading and fine texture."""

import numpy as np


def toy_scene(size: int = 96, seed: int = 0, channels: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, channels))
    base = [0.35 + 0.3 * x, 0.45 + 0.25 * np.sin(2 * np.pi * y), 0.5 - 0.2 * x * y]
    for c in range(channels):
        img[:, :, c] = base[c % 3]
    # fields and roads: a few discs and a diagonal band
    for cy, cx, rad, tint in [(0.3, 0.28, 0.17, 0.25), (0.7, 0.65, 0.22, -0.2), (0.22, 0.78, 0.12, 0.15)]:
        img[(y - cy) ** 2 + (x - cx) ** 2 < rad**2] += tint
    img[np.abs(y - 0.9 * x - 0.05) < 0.035] = 0.85
    img += 0.02 * np.sin(2 * np.pi * 9 * (x + 0.4 * y))[:, :, None]
    img += rng.normal(0.0, 0.03, img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
