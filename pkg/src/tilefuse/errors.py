"""Exception types raised across the engine."""


class TilefuseError(Exception):
    pass


class GeometryError(TilefuseError, ValueError):
    """Invalid canvas, grid, or window configuration."""


class ScheduleError(TilefuseError, ValueError):
    pass


class ProtocolError(TilefuseError):
    """Framing violation on the denoiser wire protocol."""


class ShapeMismatchError(ProtocolError):
    pass


class DenoiserTimeout(ProtocolError):
    pass


class StoreError(TilefuseError):
    """Tile store is missing, inconsistent, or failed an I/O operation."""


class SamplingError(TilefuseError):
    """A reverse-chain step failed; carries the stage, patch and timestep."""

    def __init__(self, message: str, *, stage: str, patch: int | None = None, timestep: int | None = None):
        self.stage = stage
        self.patch = patch
        self.timestep = timestep
        where = [f"stage={stage}"]
        if patch is not None:
            where.append(f"patch={patch}")
        if timestep is not None:
            where.append(f"t={timestep}")
        super().__init__(f"{message} ({', '.join(where)})")
