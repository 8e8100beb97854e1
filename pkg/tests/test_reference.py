import math

import numpy as np
import pytest

from tilefuse.denoisers import OracleExactNoise, ZeroDenoiser
from tilefuse.errors import GeometryError, SamplingError
from tilefuse.fields import compute_normalization
from tilefuse.geometry import CanvasSpec, build_grid, make_window
from tilefuse.noise import NoiseSource
from tilefuse.reference import (
    corrected_project,
    deterministic_component,
    naive_fuse,
    patch_step,
    reverse_step,
    run_reference_chain,
)
from tilefuse.schedule import NoiseSchedule, build_linear_schedule


def two_step_schedule():
    # alpha_2 = 0.81 and gamma_2 = 0.5
    betas = np.array([1 - 0.5 / 0.81, 0.19])
    alphas = 1 - betas
    return NoiseSchedule(2, betas[0], betas[1], betas, np.cumprod(alphas), alphas)


def test_deterministic_component_example():
    s = two_step_schedule()
    assert s.alpha(2) == pytest.approx(0.81, abs=1e-15) and s.gamma(2) == pytest.approx(0.5, abs=1e-15)
    D = deterministic_component(np.ones((1, 1, 1)), np.ones((1, 1, 1)), s, 2)
    expected = (1 / 0.9) * (1 - 0.19 / math.sqrt(0.5))
    assert D.item() == pytest.approx(expected, rel=1e-12)
    assert D.item() == pytest.approx(0.8125549146101244, rel=1e-12)


def test_zero_prediction_scaling(rng):
    s = build_linear_schedule(10, 1e-3, 0.1)
    y = rng.normal(size=(3, 3, 1))
    np.testing.assert_allclose(deterministic_component(y, np.zeros_like(y), s, 7), y / math.sqrt(s.alpha(7)))


def test_identity_limit(rng):
    s = build_linear_schedule(3, 1e-12, 1e-12)
    y, e = rng.normal(size=(2, 4, 4, 1))
    np.testing.assert_allclose(deterministic_component(y, e, s, 2), y, atol=1e-5)


def test_reverse_step_examples():
    D = np.array([[[0.0]]])
    assert reverse_step(D, 0.5, np.array([[[2.0]]]), 5).item() == 1.0
    assert reverse_step(D + 0.3, 0.0, np.array([[[2.0]]]), 5).item() == 0.3
    assert reverse_step(D + 0.3, 0.9, np.array([[[2.0]]]), 1).item() == 0.3


def test_naive_fuse_examples():
    canvas = CanvasSpec(1, 3, 1)
    grid = build_grid(canvas, 1, 2, 1, 1, "exact-tiling")
    from tilefuse.geometry import WeightWindow

    win = WeightWindow("custom", np.array([[3.0, 1.0]]), None)
    field = compute_normalization(grid, win)
    out = naive_fuse([np.zeros((1, 2, 1)), np.full((1, 2, 1), 4.0)], grid, win, field)
    # middle pixel: weight 1 from patch 0 (value 0), weight 3 from patch 1 (value 4)
    assert out[0, 1, 0] == 3.0
    assert out[0, 0, 0] == 0.0 and out[0, 2, 0] == 4.0


def test_naive_fuse_mean_of_two():
    grid = build_grid(CanvasSpec(2, 3, 1), 2, 2, 1, 1, "exact-tiling")
    win = make_window("constant", 2)
    out = naive_fuse([np.full((2, 2, 1), 1.0), np.full((2, 2, 1), 2.0)], grid, win, compute_normalization(grid, win))
    np.testing.assert_array_equal(out[:, :, 0], [[1.0, 1.5, 2.0], [1.0, 1.5, 2.0]])


def test_corrected_project_examples(rng):
    Y = rng.normal(size=(3, 3, 2))
    mu = rng.normal(size=(3, 3, 2))
    np.testing.assert_allclose(corrected_project(Y, mu, np.ones((3, 3))), Y, rtol=0, atol=1e-15)
    np.testing.assert_allclose(corrected_project(mu, mu, np.full((3, 3), 0.3)), mu, rtol=1e-15)
    out = corrected_project(np.full((1, 1, 1), 0.5), np.zeros((1, 1, 1)), np.full((1, 1), 0.25))
    assert out.item() == 1.0


def test_constant_consensus():
    grid = build_grid(CanvasSpec(40, 40, 1), 16, 16, 8, 8, "exact-tiling")
    win = make_window("gaussian", 16)
    fld = compute_normalization(grid, win)
    patches = [np.full((16, 16, 1), 0.37) for _ in range(len(grid))]
    Y = naive_fuse(patches, grid, win, fld)
    np.testing.assert_allclose(Y, 0.37, rtol=1e-14)
    np.testing.assert_allclose(corrected_project(Y, Y, fld.erosion_map()), 0.37, rtol=1e-14)


def test_single_patch_modes_agree(rng):
    canvas = CanvasSpec(16, 16, 3)
    grid = build_grid(canvas, 16, 16, 16, 16, "exact-tiling")
    sched = build_linear_schedule(8, 1e-3, 0.2)
    truth = rng.uniform(-1, 1, canvas.shape)
    den = OracleExactNoise(truth)
    outs = [run_reference_chain(canvas, grid, make_window("gaussian", 16), sched, den, NoiseSource(4), mode)
            for mode in ("independent", "naive", "corrected")]
    # equal up to the rounding of w * y / w
    np.testing.assert_allclose(outs[1], outs[0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(outs[2], outs[0], rtol=0, atol=1e-15)


def test_oracle_chain_recovers_truth(rng):
    canvas = CanvasSpec(40, 40, 2)
    grid = build_grid(canvas, 16, 16, 8, 8, "exact-tiling")
    truth = rng.uniform(-0.9, 0.9, canvas.shape)
    out = run_reference_chain(canvas, grid, make_window("constant", 16), build_linear_schedule(20, 1e-3, 0.2),
                              OracleExactNoise(truth), NoiseSource(0))
    np.testing.assert_allclose(out, truth, atol=1e-10)


def test_independent_needs_tiling_grid():
    canvas = CanvasSpec(32, 32, 1)
    grid = build_grid(canvas, 16, 16, 8, 8, "exact-tiling")
    with pytest.raises(GeometryError):
        run_reference_chain(canvas, grid, make_window("constant", 16), build_linear_schedule(2, 1e-3, 0.1),
                            ZeroDenoiser(), NoiseSource(0), "independent")


def test_workers_match_serial(small_setup, rng):
    canvas, grid, win, sched = small_setup
    truth = rng.uniform(-1, 1, canvas.shape)
    a = run_reference_chain(canvas, grid, win, sched, OracleExactNoise(truth), NoiseSource(1))
    b = run_reference_chain(canvas, grid, win, sched, OracleExactNoise(truth), NoiseSource(1), workers=4)
    np.testing.assert_array_equal(a, b)


def test_denoiser_failure_has_context(small_setup):
    canvas, grid, win, sched = small_setup

    def broken(req):
        if req.patch == 3:
            raise RuntimeError("boom")
        return ZeroDenoiser()(req)

    with pytest.raises(SamplingError, match=r"stage=denoise, patch=3, t=6") as ei:
        run_reference_chain(canvas, grid, win, sched, broken, NoiseSource(0))
    assert (ei.value.patch, ei.value.timestep) == (3, 6)


def test_patch_step_last_step_noise_free(rng):
    sched = build_linear_schedule(3, 0.1, 0.2)
    y = rng.normal(size=(4, 4, 1))
    D, y_prev = patch_step(0, (0, 0), y, np.zeros_like(y), sched, 1, ZeroDenoiser(), NoiseSource(0))
    np.testing.assert_array_equal(D, y_prev)


def test_snapshots(small_setup, tmp_path):
    canvas, grid, win, sched = small_setup
    run_reference_chain(canvas, grid, win, sched, ZeroDenoiser(), NoiseSource(0), snapshot_dir=tmp_path,
                        snapshot_every=2)
    assert sorted(p.name for p in tmp_path.glob("*.bin")) == ["step_00000.bin", "step_00002.bin", "step_00004.bin"]
