import mpmath
import numpy as np
import pytest

from tilefuse.errors import ScheduleError
from tilefuse.schedule import NoiseSchedule, build_linear_schedule

# extended-precision running product over the same linspace, 50 digits
GAMMA_2000 = 4.3859782361332093305e-05


def _mp_gamma(T, b0, b1):
    mpmath.mp.dps = 50
    b0, b1 = mpmath.mpf(b0), mpmath.mpf(b1)
    g = mpmath.mpf(1)
    for i in range(T):
        g *= 1 - (b0 + (b1 - b0) * i / (T - 1))
    return float(g)


def test_backbone_training_schedule():
    s = build_linear_schedule(2000, 1e-6, 1e-2)
    assert s.T == 2000
    assert s.beta(1) == 1e-6
    assert s.beta(2000) == pytest.approx(1e-2, rel=0, abs=1e-18)
    assert s.gamma(2000) == pytest.approx(GAMMA_2000, rel=1e-12)
    assert s.gamma(2000) == pytest.approx(_mp_gamma(2000, "1e-6", "1e-2"), rel=1e-12)


def test_single_step():
    s = build_linear_schedule(1, 0.5, 0.5)
    np.testing.assert_array_equal(s.betas, [0.5])
    np.testing.assert_array_equal(s.gammas, [0.5])
    np.testing.assert_array_equal(s.alphas, [0.5])


def test_two_steps():
    s = build_linear_schedule(2, 0.1, 0.3)
    np.testing.assert_allclose(s.betas, [0.1, 0.3], rtol=1e-15)
    np.testing.assert_allclose(s.gammas, [0.9, 0.63], rtol=1e-15)
    np.testing.assert_allclose(s.alphas, [0.9, 0.7], rtol=1e-15)
    assert s.gamma(0) == 1.0


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.1, 1.0), (10, 0.3, 0.2), (10, -0.1, 0.2)])
def test_rejects_bad_parameters(args):
    with pytest.raises(ScheduleError):
        build_linear_schedule(*args)


@pytest.mark.parametrize("T,b0,b1", [(2000, 1e-6, 1e-2), (100, 2e-5, 0.2), (7, 0.01, 0.9)])
def test_invariants(T, b0, b1):
    s = build_linear_schedule(T, b0, b1)
    assert np.all((s.betas > 0) & (s.betas < 1))
    np.testing.assert_array_equal(s.alphas, 1.0 - s.betas)
    assert np.all(np.diff(s.gammas) < 0) and s.gammas[-1] > 0
    assert np.all((s.alphas > 0) & (s.alphas < 1))
    prev = np.concatenate([[1.0], s.gammas[:-1]])
    np.testing.assert_allclose(s.gammas, prev * (1 - s.betas), rtol=1e-12)
    np.testing.assert_allclose(s.alphas * prev, s.gammas, rtol=4e-16 * 2)
    assert s.gammas.dtype == np.float64


def test_timestep_bounds_and_sigma():
    s = build_linear_schedule(10, 0.01, 0.1)
    assert s.sigma(3) == pytest.approx(np.sqrt(s.beta(3)))
    with pytest.raises(ScheduleError):
        s.alpha(11)
    with pytest.raises(ScheduleError):
        s.beta(0)


def test_manifest_roundtrip(tmp_path):
    s = build_linear_schedule(2000, 1e-6, 1e-2)
    s.save(tmp_path / "schedule.txt")
    back = NoiseSchedule.load(tmp_path / "schedule.txt")
    assert (back.T, back.beta_start, back.beta_end) == (2000, 1e-6, 1e-2)
    np.testing.assert_array_equal(back.gammas, s.gammas)
