import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcmkit.harness.data import Rings2D
from lcmkit.harness.metrics import empirical_frechet, gaussian_w2, noise_floor, per_class_fidelity
from lcmkit.tensor import RngStream

R = Rings2D()


def test_w2_examples():
    eye = np.eye(2)
    assert gaussian_w2([0, 0], eye, [0, 0], eye) == 0.0
    assert abs(gaussian_w2([0, 0], eye, [1, 0], eye) - 1.0) <= 1e-12
    for s1, s2 in ((0.5, 2.0), (1.0, 0.1), (0.0, 0.7)):
        got = gaussian_w2([0, 0], s1**2 * eye, [0, 0], s2**2 * eye)
        assert abs(got - 2 * (s1 - s2) ** 2) <= 1e-12


def test_w2_rejects_bad_covariances():
    with pytest.raises(ValueError):
        gaussian_w2([0, 0], np.diag([1.0, -1.0]), [0, 0], np.eye(2))
    with pytest.raises(ValueError):
        gaussian_w2([0, 0], np.array([[1.0, 0.5], [0.0, 1.0]]), [0, 0], np.eye(2))
    with pytest.raises(ValueError):
        gaussian_w2([0, 0], np.eye(3), [0, 0], np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_frechet_symmetric_and_zero_on_self(seed):
    r = RngStream(seed)
    a = r.normal((50, 3)) @ r.normal((3, 3))
    b = r.normal((40, 3)) + r.normal((3,))
    assert empirical_frechet(a, a) == 0.0
    ab, ba = empirical_frechet(a, b), empirical_frechet(b, a)
    assert ab >= 0.0 and abs(ab - ba) <= 1e-9 * max(1.0, ab)


def test_frechet_input_errors():
    with pytest.raises(ValueError):
        empirical_frechet(np.zeros((1, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        empirical_frechet(np.zeros((5, 2)), np.zeros((5, 3)))


def test_floor_and_single_mode():
    floor = noise_floor(R, count=2000)
    a, _ = R.draw(2000, seed=3)
    b, _ = R.draw(2000, seed=4)
    assert 0.0 < empirical_frechet(a, b) < 10 * floor
    one_mode = R.sample(np.zeros(2000, int), RngStream(5))
    assert empirical_frechet(a, one_mode) > floor


def test_fidelity_examples():
    labels = R.balanced_labels(2000)
    centers = R.templates()[labels]
    assert per_class_fidelity(centers, labels, R) == 0.0
    x = R.sample(labels, RngStream(6))
    want = 0.1 * np.sqrt(np.pi / 2)
    assert abs(per_class_fidelity(x, labels, R) - want) <= 0.1 * want
    # ignoring the label: every sample comes from a uniformly chosen mode
    wrong = R.sample(RngStream(7).integers(0, 7, (2000,)), RngStream(8))
    ignored = per_class_fidelity(wrong, labels, R)
    ang = 2 * np.pi * np.arange(8) / 8
    mean_gap = np.mean(np.abs(2 * np.sin((ang[:, None] - ang[None, :]) / 2)))
    assert ignored > per_class_fidelity(x, labels, R)
    assert abs(ignored - mean_gap) <= 0.1 * mean_gap


def test_fidelity_unknown_class():
    with pytest.raises(ValueError):
        per_class_fidelity(np.zeros((2, 1, 2)), np.array([0, 8]), R)
