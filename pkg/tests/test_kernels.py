"""The compiled and numpy kernels must agree exactly on the same inputs."""

import os
import subprocess
import sys

import numpy as np
import pytest

from pagann.graph import medoid_index
from pagann.kernels import numba_backend, numpy_backend

pytestmark = pytest.mark.skipif(numba_backend is None, reason="numba backend disabled")


def _build(be, X, R=10, L=32, seed=0):
    n = len(X)
    adj = np.zeros((n, R), np.int32)
    deg = np.zeros(n, np.int32)
    order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    be.build_incremental(X, adj, deg, order, medoid_index(X), L, R, 1.0, np.zeros(n, np.int32))
    return adj, deg


def test_build_and_search_agree(seed):
    X = np.random.default_rng(seed).random((400, 8), dtype=np.float32)
    a_adj, a_deg = _build(numba_backend, X, seed=seed)
    b_adj, b_deg = _build(numpy_backend, X, seed=seed)
    assert np.array_equal(a_deg, b_deg)
    for i in range(400):
        assert np.array_equal(a_adj[i, : a_deg[i]], b_adj[i, : b_deg[i]])
    q = np.random.default_rng(seed + 10).random(8, dtype=np.float32)
    e = medoid_index(X)
    ra = numba_backend.greedy_search(X, a_adj, a_deg, e, q, 24, np.zeros(400, np.int32), 1)
    rb = numpy_backend.greedy_search(X, b_adj, b_deg, e, q, 24, np.zeros(400, np.int32), 1)
    for x, y in zip(ra[:4], rb[:4]):
        assert np.array_equal(x, y)
    assert ra[4] == rb[4]


def test_prune_and_distances_agree():
    rng = np.random.default_rng(3)
    X = rng.random((60, 5), dtype=np.float32)
    cand = np.arange(1, 60, dtype=np.int64)
    d = numpy_backend.sqdist_batch(X, cand, X[0])
    assert np.allclose(d, numba_backend.sqdist_batch(X, cand, X[0]), rtol=1e-12)
    ids, dd = numpy_backend.sort_pairs(cand, d)
    assert np.array_equal(
        numba_backend.robust_prune(X, 0, ids, dd, 8, 1.2), numpy_backend.robust_prune(X, 0, ids, dd, 8, 1.2)
    )


def test_env_flag_selects_numpy():
    code = "from pagann.kernels import BACKEND; print(BACKEND)"
    env = dict(os.environ, PAGANN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
