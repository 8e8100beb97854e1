"""Self-check suites exposed through ``tilefuse verify``."""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field

import numpy as np

from .denoisers import OracleExactNoise, ZeroDenoiser
from .fields import compute_normalization, precompute_coefficient_tiles
from .geometry import CanvasSpec, build_grid, make_window
from .mda import run_streaming_chain
from .noise import NoiseSource
from .reference import corrected_project, naive_fuse, run_reference_chain
from .schedule import build_linear_schedule

TOL_DOUBLE = 1e-10
TOL_SINGLE = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool = True
    lines: list[str] = field(default_factory=list)

    def check(self, ok: bool, line: str) -> None:
        self.passed &= bool(ok)
        self.lines.append(f"[{'PASS' if ok else 'FAIL'}] {line}")


def random_config(rng: np.random.Generator):
    patch = int(rng.choice([16, 32]))
    stride = int(rng.choice([8, 16]))
    policy = "exact-tiling" if rng.random() < 0.5 else "clamp-last"
    if policy == "exact-tiling":
        H = patch + stride * int(rng.integers(0, (128 - patch) // stride + 1))
        W = patch + stride * int(rng.integers(0, (128 - patch) // stride + 1))
    else:
        H, W = (int(v) for v in rng.integers(patch, 129, size=2))
    canvas = CanvasSpec(H, W, int(rng.choice([1, 3])))
    grid = build_grid(canvas, patch, patch, stride, stride, policy)
    window = make_window("gaussian" if rng.random() < 0.5 else "constant", patch)
    return canvas, grid, window


def equivalence(seed: int = 0, configs: int = 5, steps: int = 10) -> SuiteResult:
    res = SuiteResult("equivalence")
    rng = np.random.default_rng(seed)
    schedule = build_linear_schedule(steps, 1e-4, 0.2)
    for i in range(configs):
        canvas, grid, window = random_config(rng)
        truth = rng.uniform(-1, 1, canvas.shape)
        cond = rng.uniform(-1, 1, canvas.shape)
        noise = NoiseSource(seed * 1000 + i)
        for dtype, tol in (("float64", TOL_DOUBLE), ("float32", TOL_SINGLE)):
            den = OracleExactNoise(truth.astype(dtype))
            ref = run_reference_chain(canvas, grid, window, schedule, den, noise, "corrected",
                                      condition=cond, dtype=dtype)
            with tempfile.TemporaryDirectory() as d:
                out = run_streaming_chain(canvas, grid, window, schedule, den, noise, d, condition=cond,
                                          dtype=dtype, tile_size=32).assemble()
            diff = float(np.max(np.abs(ref.astype(np.float64) - out)))
            res.check(diff <= tol, f"config {i} {canvas.height}x{canvas.width}x{canvas.channels} patch {grid.patch_h}"
                                   f" stride {grid.stride_y} {grid.border_policy} {window.kind} {dtype}:"
                                   f" max|ref - mda| = {diff:.3e} (tol {tol:g})")
    return res


def variance(seed: int = 0, trials: int = 10000) -> SuiteResult:
    """Monte-Carlo check of the fused-noise variance before and after correction."""
    res = SuiteResult("variance")
    canvas = CanvasSpec(64, 64, 1)
    grid = build_grid(canvas, 32, 32, 16, 16, "exact-tiling")
    window = make_window("constant", 32)
    field_ = compute_normalization(grid, window)
    lam = field_.erosion_map()
    sigma = 0.5
    rng = np.random.default_rng(seed)
    Ds = [rng.normal(size=(32, 32, 1)) for _ in range(len(grid))]
    mu = naive_fuse(Ds, grid, window, field_)
    noise = NoiseSource(seed)
    pix = {"1-cover": (0, 0), "2-cover": (0, 32), "4-cover": (32, 32)}
    naive_s, corr_s = [], []
    for trial in range(trials):
        ys = [D + sigma * noise.patch_noise(k, trial + 2, 32, 32, 1) for k, D in enumerate(Ds)]
        Y = naive_fuse(ys, grid, window, field_)
        Ystar = corrected_project(Y, mu, lam)
        naive_s.append([Y[p][0] for p in pix.values()])
        corr_s.append([Ystar[p][0] for p in pix.values()])
    naive_s, corr_s = np.array(naive_s), np.array(corr_s)
    for j, (name, p) in enumerate(pix.items()):
        for label, samples, target in (("naive", naive_s[:, j], sigma**2 * lam[p]),
                                       ("corrected", corr_s[:, j], sigma**2)):
            v, se = sample_variance_se(samples)
            res.check(abs(v - target) <= 3 * se,
                      f"{label} {name} pixel {p}: var {v:.5f} vs {target:.5f} (3 SE = {3 * se:.5f})")
    return res


def sample_variance_se(x: np.ndarray) -> tuple[float, float]:
    """Unbiased variance and its standard error from the fourth central moment."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    d = x - x.mean()
    v = float(np.sum(d * d) / (n - 1))
    m4 = float(np.mean(d**4))
    return v, float(np.sqrt(max(m4 - v * v, 0.0) / n))


def periodicity(seed: int = 0) -> SuiteResult:
    res = SuiteResult("periodicity")
    rng = np.random.default_rng(seed)
    for patch, stride in ((16, 8), (32, 16), (32, 8), (24, 16)):
        n = int(rng.integers(6, 10))
        canvas = CanvasSpec(patch + stride * n, patch + stride * (n + 1), 1)
        grid = build_grid(canvas, patch, patch, stride, stride, "exact-tiling")
        for kind in ("constant", "gaussian"):
            window = make_window(kind, patch)
            tiles = precompute_coefficient_tiles(grid, window)
            fld = compute_normalization(grid, window)
            worst = 0.0
            for k in range(len(grid)):
                gain, shift = tiles.for_patch(k)
                rs, cs = grid.patch_slices(k)
                g = window.values / fld.Smap[rs, cs]
                s = window.values * (1 / fld.Wmap[rs, cs] - 1 / fld.Smap[rs, cs])
                worst = max(worst, float(np.abs(gain - g).max()), float(np.abs(shift - s).max()))
            res.check(worst <= 1e-12, f"patch {patch} stride {stride} {kind}: {len(tiles.tiles)} classes"
                                      f" for {len(grid)} patches, max deviation {worst:.2e}")
    return res


def memory(seed: int = 0, sizes=(128, 256, 512)) -> SuiteResult:
    res = SuiteResult("memory")
    schedule = build_linear_schedule(2, 1e-4, 0.2)
    peaks = []
    for n in sizes:
        canvas = CanvasSpec(n, n, 3)
        grid = build_grid(canvas, 32, 32, 16, 16, "exact-tiling")
        with tempfile.TemporaryDirectory() as d:
            out = run_streaming_chain(canvas, grid, make_window("constant", 32), schedule, ZeroDenoiser(),
                                      NoiseSource(seed), d, tile_size=64)
        peaks.append(out.accounting.peak)
        res.lines.append(f"       {n}x{n}: peak engine bytes {out.accounting.peak}")
    spread = (max(peaks) - min(peaks)) / min(peaks)
    res.check(spread < 0.05, f"peak spread across {list(sizes)} canvases: {spread:.2%} (< 5%)")
    return res


SUITES = {"equivalence": equivalence, "variance": variance, "periodicity": periodicity, "memory": memory}
