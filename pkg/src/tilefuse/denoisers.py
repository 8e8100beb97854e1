"""Noise-prediction backends.

A backend is any callable taking a :class:`DenoiseRequest` and returning a
:class:`DenoiseResponse`. Two analytic backends ship for verification; the
third talks to an external model process over a fixed binary framing::

    header   16 bytes  b"TFD1" | u32 version=1 | u32 h | u32 w     (little-endian)
    request  header | u32 C | f64 gamma | condition | latent
    response header | epsilon_hat

Tensors are row-major, channel-last, little-endian float32, h*w*C values each.
"""

from __future__ import annotations

import os
import queue
import select
import struct
import subprocess
import time
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Mapping, Sequence

import numpy as np

from .errors import DenoiserTimeout, ProtocolError, ShapeMismatchError

MAGIC = b"TFD1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_REQ_EXTRA = struct.Struct("<Id")
_WIRE = np.dtype("<f4")


@dataclass
class DenoiseRequest:
    condition: np.ndarray
    latent: np.ndarray
    gamma: float
    # engine-side context, never serialized
    patch: int | None = field(default=None, compare=False)
    origin: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.condition.shape != self.latent.shape or self.latent.ndim != 3:
            raise ShapeMismatchError(
                f"condition {self.condition.shape} and latent {self.latent.shape} must be equal h x w x C"
            )
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.latent.shape


@dataclass
class DenoiseResponse:
    epsilon_hat: np.ndarray


Denoiser = Callable[[DenoiseRequest], DenoiseResponse]


class ZeroDenoiser:
    """Predicts zero noise everywhere."""

    def __call__(self, req: DenoiseRequest) -> DenoiseResponse:
        return DenoiseResponse(np.zeros_like(req.latent))


class OracleExactNoise:
    """Inverts the forward marginal y_t = sqrt(g) y0 + sqrt(1 - g) eps against a known y0.

    Ground truth is looked up by patch origin. By default every origin reads
    its crop of one shared canvas, so overlapping patches agree. ``drift``
    adds a per-origin constant offset (per channel, std ``drift``) to the
    target each patch sees, standing in for the patch-to-patch style drift
    of a real model; with drift the final-step targets of neighbouring
    patches disagree and independent tiling shows seams.
    """

    def __init__(
        self,
        ground_truth: np.ndarray,
        patch_shape: tuple[int, int] | None = None,
        *,
        registry: Mapping[tuple[int, int], np.ndarray] | None = None,
        drift: float = 0.0,
        drift_seed: int = 0,
    ):
        self.ground_truth = np.asarray(ground_truth)
        self.patch_shape = patch_shape
        self.registry = dict(registry or {})
        self.drift = float(drift)
        self.drift_seed = int(drift_seed)

    def target(self, origin: tuple[int, int], shape: tuple[int, int, int]) -> np.ndarray:
        if origin in self.registry:
            y0 = self.registry[origin]
        else:
            r, c = origin
            h, w, _ = shape
            y0 = self.ground_truth[r : r + h, c : c + w]
        if y0.shape != shape:
            raise ShapeMismatchError(f"ground truth at {origin} has shape {y0.shape}, request {shape}")
        if self.drift:
            rng = np.random.default_rng([self.drift_seed, origin[0], origin[1]])
            y0 = y0 + rng.normal(0.0, self.drift, size=shape[2])
        return y0

    def __call__(self, req: DenoiseRequest) -> DenoiseResponse:
        if req.origin is None:
            raise ValueError("oracle backend needs the request's patch origin")
        y0 = self.target(req.origin, req.shape)
        g = req.gamma
        eps = (req.latent - np.sqrt(g) * y0) / np.sqrt(1.0 - g)
        return DenoiseResponse(eps.astype(req.latent.dtype, copy=False))


# --------------------------------------------------------------------------
# wire format


def _pack_header(h: int, w: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, h, w)


def _unpack_header(buf: bytes) -> tuple[int, int]:
    magic, version, h, w = _HEADER.unpack(buf)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}, expected {VERSION}")
    return h, w


def encode_request(req: DenoiseRequest) -> bytes:
    h, w, c = req.shape
    return b"".join(
        [
            _pack_header(h, w),
            _REQ_EXTRA.pack(c, float(req.gamma)),
            np.ascontiguousarray(req.condition, dtype=_WIRE).tobytes(),
            np.ascontiguousarray(req.latent, dtype=_WIRE).tobytes(),
        ]
    )


def decode_request(buf: bytes) -> DenoiseRequest:
    h, w = _unpack_header(buf[: _HEADER.size])
    off = _HEADER.size
    c, gamma = _REQ_EXTRA.unpack_from(buf, off)
    off += _REQ_EXTRA.size
    n = h * w * c
    if len(buf) != off + 2 * n * _WIRE.itemsize:
        raise ProtocolError(f"request body is {len(buf) - off} bytes, expected {2 * n * _WIRE.itemsize}")
    arr = np.frombuffer(buf, dtype=_WIRE, count=2 * n, offset=off).astype(np.float32)
    return DenoiseRequest(arr[:n].reshape(h, w, c), arr[n:].reshape(h, w, c), gamma)


def encode_response(epsilon_hat: np.ndarray) -> bytes:
    h, w, _ = epsilon_hat.shape
    return _pack_header(h, w) + np.ascontiguousarray(epsilon_hat, dtype=_WIRE).tobytes()


def _check_response_header(h: int, w: int, expected: tuple[int, int, int]) -> None:
    if (h, w) != expected[:2]:
        raise ShapeMismatchError(
            f"response shape {h}x{w}x{expected[2]} does not match request shape {expected[0]}x{expected[1]}x{expected[2]}"
        )


def _finish_response(body: bytes, shape: tuple[int, int, int]) -> DenoiseResponse:
    eps = np.frombuffer(body, dtype=_WIRE).reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(eps)):
        raise ProtocolError(f"response contains {int(np.sum(~np.isfinite(eps)))} non-finite values")
    return DenoiseResponse(eps)


def decode_response(buf: bytes, shape: tuple[int, int, int]) -> DenoiseResponse:
    h, w = _unpack_header(buf[: _HEADER.size])
    _check_response_header(h, w, shape)
    body = buf[_HEADER.size :]
    if len(body) != int(np.prod(shape)) * _WIRE.itemsize:
        raise ProtocolError(f"response body is {len(body)} bytes, expected {int(np.prod(shape)) * _WIRE.itemsize}")
    return _finish_response(body, shape)


def read_exact(stream: BinaryIO, n: int) -> bytes:
    """Blocking read of exactly ``n`` bytes; empty result only at clean EOF."""
    chunks, got = [], 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            if got == 0:
                return b""
            raise ProtocolError(f"stream closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_request(stream: BinaryIO) -> DenoiseRequest | None:
    head = read_exact(stream, _HEADER.size)
    if not head:
        return None
    h, w = _unpack_header(head)
    extra = read_exact(stream, _REQ_EXTRA.size)
    c, _ = _REQ_EXTRA.unpack(extra)
    body = read_exact(stream, 2 * h * w * c * _WIRE.itemsize)
    return decode_request(head + extra + body)


# --------------------------------------------------------------------------
# subprocess channel


class _Channel:
    def __init__(self, command: Sequence[str], env: Mapping[str, str] | None):
        self.proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            bufsize=0,
            env=None if env is None else dict(env),
        )

    def _read(self, n: int, deadline: float) -> bytes:
        fd = self.proc.stdout.fileno()
        chunks, got = [], 0
        while got < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DenoiserTimeout(f"no complete response within timeout ({got} of {n} bytes)")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - got)
            if not chunk:
                raise ProtocolError(f"denoiser process closed its output after {got} of {n} bytes")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def roundtrip(self, req: DenoiseRequest, timeout: float) -> DenoiseResponse:
        deadline = time.monotonic() + timeout
        try:
            self.proc.stdin.write(encode_request(req))
            self.proc.stdin.flush()
        except BrokenPipeError:
            raise ProtocolError("denoiser process is not accepting input") from None
        shape = req.shape
        h, w = _unpack_header(self._read(_HEADER.size, deadline))
        _check_response_header(h, w, shape)
        body = self._read(int(np.prod(shape)) * _WIRE.itemsize, deadline)
        return _finish_response(body, shape)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except Exception:
                self.proc.kill()
                self.proc.wait()


class ExternalDenoiser:
    """Pool of subprocess channels; each channel serves one request at a time.

    A channel that raised (timeout, framing error) is discarded and replaced,
    since its stream position is no longer known.
    """

    def __init__(
        self,
        command: Sequence[str],
        timeout: float = 60.0,
        channels: int = 1,
        env: Mapping[str, str] | None = None,
    ):
        if channels < 1:
            raise ValueError("need at least one channel")
        self.command = list(command)
        self.timeout = float(timeout)
        self.env = env
        self._pool: queue.Queue[_Channel] = queue.Queue()
        for _ in range(channels):
            self._pool.put(_Channel(self.command, env))

    def __call__(self, req: DenoiseRequest) -> DenoiseResponse:
        chan = self._pool.get()
        try:
            resp = chan.roundtrip(req, self.timeout)
        except BaseException:
            chan.proc.kill()
            chan.close()
            self._pool.put(_Channel(self.command, self.env))
            raise
        self._pool.put(chan)
        return resp

    def close(self) -> None:
        while not self._pool.empty():
            self._pool.get_nowait().close()

    def __enter__(self) -> "ExternalDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
