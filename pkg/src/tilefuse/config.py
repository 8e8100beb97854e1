"""Run configuration: a flat ``key: value`` file mirroring the CLI flags."""

from __future__ import annotations

import dataclasses
import shlex
import shutil
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import TilefuseError
from .manifest import format_manifest, parse_manifest
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T

MODES = ("independent", "naive", "corrected", "mda")


class ConfigError(TilefuseError, ValueError):
    pass


@dataclass
class RunConfig:
    input: str = "toy"
    input_kind: str = "hr"  # hr: synthesize the LR condition; lr: upsample the input
    factor: int = 5
    toy_size: int = 96
    patch_h: int = 32
    patch_w: int = 32
    stride_y: int = 16
    stride_x: int = 16
    border_policy: str = "clamp-last"
    window: str = "constant"
    sigma: float | None = None
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    denoiser: str = "oracle"
    denoiser_command: str = ""
    denoiser_timeout: float = 60.0
    oracle_drift: float = 0.0
    oracle_drift_seed: int = 0
    seed: int = 0
    mode: str = "mda"
    store: str = ""
    tile_size: int = 64
    dtype: str = "float32"
    workers: int = 1
    deterministic: bool = True
    patch_order: str = "raster"
    order_seed: int = 0
    snapshot_every: int = 0
    output: str = "out.png"

    def to_text(self) -> str:
        return format_manifest({f.name: _fmt(getattr(self, f.name)) for f in fields(self)})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = parse_manifest(text)
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: _parse(known[k], v) for k, v in raw.items()})

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.input != "toy" and not Path(self.input).is_file():
            raise ConfigError(f"input image {self.input} does not exist")
        if self.input_kind not in ("hr", "lr"):
            raise ConfigError(f"input_kind must be hr or lr, got {self.input_kind!r}")
        if self.denoiser not in ("zero", "oracle", "external"):
            raise ConfigError(f"unknown denoiser backend {self.denoiser!r}")
        if self.denoiser == "oracle" and self.input_kind != "hr":
            raise ConfigError("the oracle backend needs a high-resolution input as ground truth")
        if self.denoiser == "external":
            argv = shlex.split(self.denoiser_command)
            if not argv or shutil.which(argv[0]) is None:
                raise ConfigError(f"denoiser command {self.denoiser_command!r} is not executable")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.patch_order not in ("raster", "reverse", "shuffle"):
            raise ConfigError(f"patch_order must be raster, reverse or shuffle, got {self.patch_order!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def _parse(f: dataclasses.Field, text: str):
    if text == "none":
        return None
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind.startswith("bool"):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {f.name}: cannot parse {text!r} as {kind}") from None
    return text
