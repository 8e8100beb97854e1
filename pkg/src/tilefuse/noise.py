"""Counter-based Gaussian noise keyed by (seed, stream, patch, timestep, element).

Each sample is a pure function of its coordinates: the key tuple is folded
through the SplitMix64 finalizer, each element counter is mixed against that
key to give two independent 64-bit words, and Box-Muller (cosine branch)
turns the pair into one standard normal. No generator state is carried, so
any sub-block can be produced in isolation and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# domain tags keep patch streams and the initial canvas field disjoint
_PATCH_STREAM = 0x5041544348  # "PATCH"
_FIELD_STREAM = 0x4649454C44  # "FIELD"


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64, matching splitmix64 above
    z = x + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _key(*parts: int) -> int:
    k = 0
    for part in parts:
        k = splitmix64(k ^ (int(part) & _MASK))
    return k


def _gaussians(key: int, counters: np.ndarray) -> np.ndarray:
    base = counters.astype(np.uint64) * np.uint64(2)
    k = np.uint64(key)
    b1 = _mix_array(_mix_array(base) ^ k)
    b2 = _mix_array(_mix_array(base + np.uint64(1)) ^ k)
    u1 = ((b1 >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u2 = (b2 >> np.uint64(11)).astype(np.float64) * 2.0**-53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class NoiseSource:
    master_seed: int

    def patch_noise(self, k: int, t: int, h: int, w: int, channels: int) -> np.ndarray:
        """z for patch ``k`` at timestep ``t``; element index is (i * w + j) * C + c."""
        key = _key(self.master_seed, _PATCH_STREAM, k, t)
        return _gaussians(key, np.arange(h * w * channels, dtype=np.uint64)).reshape(h, w, channels)

    def field_noise(
        self, canvas_width: int, channels: int, rows: slice | range, cols: slice | range, t: int = 0
    ) -> np.ndarray:
        """Canvas-level noise keyed by global pixel, for any rectangular block.

        Used for the initial latent: every pixel is drawn exactly once no matter
        how many patches later read it, and any tile can be drawn alone.
        """
        r = np.arange(rows.start, rows.stop, dtype=np.uint64)
        c = np.arange(cols.start, cols.stop, dtype=np.uint64)
        pix = r[:, None] * np.uint64(canvas_width) + c[None, :]
        idx = pix[:, :, None] * np.uint64(channels) + np.arange(channels, dtype=np.uint64)
        key = _key(self.master_seed, _FIELD_STREAM, t)
        return _gaussians(key, idx)

    def canvas_noise(self, height: int, width: int, channels: int, t: int = 0) -> np.ndarray:
        return self.field_noise(width, channels, range(0, height), range(0, width), t)
