import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pagann.core import Dataset, as_vector, brute_force_knn, distance
from pagann.errors import InvalidArgumentError

from conftest import random_dataset

finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


def test_distance_pythagorean():
    assert distance([0, 0], [3, 4]) == 25.0


def test_distance_identity():
    x = np.random.default_rng(0).random(7, dtype=np.float32)
    assert distance(x, x) == 0.0


def test_distance_matches_scalar_loop():
    rng = np.random.default_rng(1)
    a, b = rng.random(8, dtype=np.float32), rng.random(8, dtype=np.float32)
    ref = 0.0
    for i in range(8):
        diff = float(a[i]) - float(b[i])
        ref += diff * diff
    assert distance(a, b) == pytest.approx(ref, rel=1e-5)


def test_distance_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        distance([1, 2], [1, 2, 3])


@given(arrays(np.float32, 6, elements=finite), arrays(np.float32, 6, elements=finite))
def test_distance_symmetric_nonnegative(a, b):
    assert distance(a, b) == distance(b, a)
    assert distance(a, b) >= 0.0
    if distance(a, b) == 0.0:
        assert np.array_equal(a, b)


def test_dataset_rejects_nonfinite():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidArgumentError):
        as_vector([np.inf, 0.0])


def test_dataset_is_read_only():
    ds = random_dataset(5, 3)
    with pytest.raises(ValueError):
        ds.vectors[0, 0] = 1.0


def test_knn_on_a_line():
    ds = Dataset(np.array([[0.0], [1.0], [2.0]]))
    assert brute_force_knn(ds, [0.9], 1)[0][0] == 1


def test_knn_k_equals_n_sorts_everything():
    ds = random_dataset(30, 4, seed=2)
    q = np.zeros(4, np.float32)
    res = brute_force_knn(ds, q, 30)
    assert sorted(i for i, _ in res) == list(range(30))
    assert [d for _, d in res] == sorted(d for _, d in res)


def test_knn_k_too_large():
    with pytest.raises(InvalidArgumentError):
        brute_force_knn(random_dataset(3, 2), [0, 0], 4)


def test_knn_matches_full_sort_oracle():
    ds = random_dataset(200, 16, seed=5)
    q = np.random.default_rng(6).random(16, dtype=np.float32)
    scored = []
    for i, v in enumerate(ds.vectors):
        scored.append((sum((float(x) - float(y)) ** 2 for x, y in zip(v, q)), i))
    scored.sort()
    expect = [i for _, i in scored[:10]]
    assert [i for i, _ in brute_force_knn(ds, q, 10)] == expect


def test_knn_ties_prefer_smaller_id():
    ds = Dataset(np.array([[1.0], [-1.0], [1.0], [-1.0]]))
    assert [i for i, _ in brute_force_knn(ds, [0.0], 4)] == [0, 1, 2, 3]


@given(st.integers(0, 2**31 - 1), st.integers(1, 39))
def test_knn_prefix_property(seed, k):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.integers(0, 4, (40, 3)).astype(np.float32))
    q = rng.integers(0, 4, 3).astype(np.float32)
    assert brute_force_knn(ds, q, k) == brute_force_knn(ds, q, k + 1)[:k]
    assert brute_force_knn(ds, q, k) == brute_force_knn(ds, q, k)
