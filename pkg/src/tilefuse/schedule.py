"""Linear beta schedule in the cumulative-gamma parameterization.

Timesteps are 1-based throughout the package: ``schedule.gamma(t)`` is the
cumulative signal retention after ``t`` forward steps and ``gamma(0) == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScheduleError
from .manifest import format_manifest, parse_manifest

# Training configuration of the SR backbone the engine is meant to drive.
DEFAULT_T = 2000
DEFAULT_BETA_START = 1e-6
DEFAULT_BETA_END = 1e-2


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False, compare=False)
    gammas: np.ndarray = field(repr=False, compare=False)
    alphas: np.ndarray = field(repr=False, compare=False)

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside 1..{self.T}")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def gamma(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.gammas[self._check(t)])

    def sigma(self, t: int) -> float:
        """Stochastic scale of the reverse step, sqrt(1 - alpha_t)."""
        return float(np.sqrt(1.0 - self.alpha(t)))

    def to_manifest(self) -> str:
        return format_manifest({"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_manifest())

    @classmethod
    def from_manifest(cls, text: str) -> "NoiseSchedule":
        meta = parse_manifest(text)
        return build_linear_schedule(int(meta["T"]), float(meta["beta_start"]), float(meta["beta_end"]))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseSchedule":
        return cls.from_manifest(Path(path).read_text())


def build_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Betas spaced linearly (endpoints included), gammas as their running product.

    Everything is held in float64; a 2000-term product drifts visibly in float32.
    """
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ScheduleError(f"betas must lie in (0, 1), got [{beta_start}, {beta_end}]")
    if beta_start > beta_end:
        raise ScheduleError(f"beta_start {beta_start} exceeds beta_end {beta_end}")
    T = int(T)
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    gammas = np.cumprod(alphas)
    for arr in (betas, alphas, gammas):
        arr.flags.writeable = False
    return NoiseSchedule(T, float(beta_start), float(beta_end), betas, gammas, alphas)
