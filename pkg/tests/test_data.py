import numpy as np
import pytest

from lcmkit.harness.data import DATASETS, Rings2D, SeqToy, get_dataset
from lcmkit.tensor import RngStream


def test_shapes_and_classes():
    r, s = Rings2D(), SeqToy()
    assert (r.num_classes, r.seq_len, r.data_dim) == (8, 1, 2)
    assert (s.num_classes, s.seq_len, s.data_dim) == (4, 16, 4)
    assert r.generate(3, RngStream(0)).shape == (1, 2)
    assert s.generate(1, RngStream(0)).shape == (16, 4)
    assert np.allclose(np.linalg.norm(r.templates()[:, 0], axis=1), 1.0)


def test_seqtoy_template_formula():
    s = SeqToy()
    c, p, j = 2, 5, 3
    want = np.sin(2 * np.pi * (c + 1) * p / 16 + 2 * np.pi * j / 4)
    assert abs(s.templates()[c, p, j] - want) <= 1e-12


@pytest.mark.parametrize("name", sorted(DATASETS))
def test_generators_deterministic(name):
    ds = get_dataset(name)
    for c in range(ds.num_classes):
        assert np.array_equal(ds.generate(c, RngStream(9)), ds.generate(c, RngStream(9)))
    a, la = ds.draw(50, seed=2)
    b, lb = ds.draw(50, seed=2)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert not np.array_equal(a, ds.draw(50, seed=3)[0])


def test_noise_level():
    ds = Rings2D()
    labels = np.full(20000, 5)
    x = ds.sample(labels, RngStream(4))[:, 0]
    assert abs(x.std(axis=0) - 0.1).max() <= 0.005


def test_errors():
    with pytest.raises(ValueError):
        get_dataset("audiocaps")
    with pytest.raises(ValueError):
        Rings2D().sample(np.array([8]), RngStream(0))
