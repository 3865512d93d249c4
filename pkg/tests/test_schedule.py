import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcmkit.schedule import boundary_coeffs, make_schedule, perturb, sampling_grid
from lcmkit.tensor import RngStream, ShapeError, Tensor


def test_constant_beta_hand_oracle():
    s = make_schedule(N=4, beta_start=0.1, beta_end=0.1)
    assert np.allclose(s.alpha_bar, [1, 0.9, 0.81, 0.729, 0.6561], rtol=0, atol=1e-15)
    assert abs(s.alpha(1) - math.sqrt(0.9)) < 1e-15
    assert abs(s.sigma(1) - math.sqrt(0.1)) < 1e-15
    assert round(s.alpha(1), 5) == 0.94868 and round(s.sigma(1), 5) == 0.31623


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 2000), st.floats(1e-5, 0.05), st.floats(0, 0.5))
def test_schedule_invariants(N, lo, extra):
    s = make_schedule(N=N, beta_start=lo, beta_end=min(lo + extra, 0.9))
    t = np.arange(N + 1)
    a, g = s.alpha(t), s.sigma(t)
    assert s.alpha(0) == 1.0 and s.sigma(0) == 0.0
    assert np.abs(a * a + g * g - 1).max() <= 1e-12
    assert np.all(np.diff(a) < 0) and np.all(np.diff(g) >= 0)
    # sigma = sqrt(1 - alpha_bar) rounds to 1.0 once alpha_bar drops below float64 epsilon
    visible = s.alpha_bar[1:] > 1e-10
    assert np.all(np.diff(g)[visible] > 0)
    assert np.all((s.beta > 0) & (s.beta < 1)) and np.all(np.diff(s.beta) >= 0)


@pytest.mark.parametrize("kw", [
    {"N": 1}, {"beta_start": 0.0}, {"beta_start": 0.03, "beta_end": 0.02},
    {"beta_end": 1.0}, {"sigma_data": 0.0}, {"kappa": -1.0},
])
def test_invalid_schedule(kw):
    with pytest.raises(ValueError):
        make_schedule(**kw)


def test_schedule_is_deterministic_and_read_only():
    a, b = make_schedule(), make_schedule()
    assert a.alpha_bar.tobytes() == b.alpha_bar.tobytes()
    with pytest.raises(ValueError):
        a.alpha_bar[3] = 0.0


def test_out_of_range_timestep():
    s = make_schedule()
    for bad in (-1, 1001, 2.5):
        with pytest.raises(ValueError):
            s.alpha(bad)


def test_perturb_examples():
    s = make_schedule()
    z0 = RngStream(1).normal((3, 2))
    assert np.array_equal(perturb(s, z0, 0, RngStream(2).normal((3, 2))), z0)
    assert np.array_equal(perturb(s, z0, 300, np.zeros((3, 2))), s.alpha(300) * z0)


def test_perturb_arithmetic():
    # a schedule point with alpha=0.6, sigma=0.8 is reached at alpha_bar=0.36
    s = make_schedule(N=2, beta_start=0.64, beta_end=0.64)
    assert abs(s.alpha(1) - 0.6) < 1e-15
    out = perturb(s, np.array([1.0]), 1, np.array([0.5]))
    assert np.allclose(out, [1.0], atol=1e-15)


def test_perturb_per_item_times_and_tensors():
    s = make_schedule()
    z0, eps = np.ones((2, 1, 2)), np.ones((2, 1, 2))
    out = perturb(s, Tensor(z0), np.array([10, 900]), Tensor(eps))
    assert np.allclose(out[1], s.alpha(900) + s.sigma(900))
    with pytest.raises(ShapeError):
        perturb(s, z0, 10, np.ones((2, 2)))


def test_boundary_coeffs_examples():
    s = make_schedule()
    assert boundary_coeffs(s, 0) == (1.0, 0.0)
    c_skip, c_out = boundary_coeffs(s, 10)
    assert abs(c_skip - 0.2) < 1e-15
    assert abs(c_out - 0.5 / math.sqrt(1.25)) < 1e-15 and round(c_out, 5) == 0.44721


def test_boundary_coeffs_monotone():
    s = make_schedule()
    c_skip, c_out = boundary_coeffs(s, np.arange(1001))
    assert np.all(np.diff(c_skip) < 0) and np.all(np.diff(c_out) > 0)


def test_sampling_grid_examples():
    s = make_schedule()
    assert sampling_grid(s, 1).tolist() == [1000]
    assert sampling_grid(s, 2).tolist() == [1000, 500]
    with pytest.raises(ValueError):
        sampling_grid(s, 0)
    with pytest.raises(ValueError):
        sampling_grid(s, 1001)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000))
def test_sampling_grid_strictly_decreasing(steps):
    g = sampling_grid(make_schedule(), steps)
    assert len(g) == steps and g[0] == 1000 and g[-1] >= 1
    assert np.all(np.diff(g) < 0)
