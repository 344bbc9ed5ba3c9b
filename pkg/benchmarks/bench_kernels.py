#!/usr/bin/env python3
"""Compiled vs pure-numpy graph kernels on identical inputs.

Usage:
    python benchmarks/bench_kernels.py [--n N] [--dim D] [--queries Q] [--R R] [--L L]

Times an incremental graph build and a batch of greedy searches with each
backend and checks that both produce the same adjacency and results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pagann.graph import medoid_index
from pagann.kernels import numba_backend, numpy_backend


def build(backend, data, order, entry, R, L, alpha):
    n = len(data)
    adj = np.zeros((n, R), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    visited = np.zeros(n, dtype=np.int32)
    t0 = time.perf_counter()
    backend.build_incremental(data, adj, deg, order, entry, L, R, alpha, visited)
    return time.perf_counter() - t0, adj, deg


def queries(backend, data, adj, deg, entry, qs, L):
    visited = np.zeros(len(data), dtype=np.int32)
    out = []
    t0 = time.perf_counter()
    for i, q in enumerate(qs):
        ids, _, _, _, _ = backend.greedy_search(data, adj, deg, entry, q, L, visited, i + 1)
        out.append(ids[:10].copy())
    return time.perf_counter() - t0, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--R", type=int, default=16)
    ap.add_argument("--L", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    data = rng.random((args.n, args.dim), dtype=np.float32)
    qs = rng.random((args.queries, args.dim), dtype=np.float32)
    entry = medoid_index(data)
    order = rng.permutation(args.n).astype(np.int64)

    backends = [("numpy", numpy_backend)]
    if numba_backend is None:
        print("numba backend disabled (PAGANN_DISABLE_NUMBA) or not installed; numpy only")
    else:
        # Compile outside the timed region.
        build(numba_backend, data[:64], np.arange(64, dtype=np.int64), 0, args.R, args.L, 1.0)
        backends.insert(0, ("numba", numba_backend))

    rows = {}
    for name, be in backends:
        tb, adj, deg = build(be, data, order, entry, args.R, args.L, 1.0)
        tq, res = queries(be, data, adj, deg, entry, qs, args.L)
        rows[name] = (tb, tq, adj, deg, res)
        print(f"{name:6s} build {tb:8.3f}s   search {tq / len(qs) * 1e3:8.3f} ms/query")

    if len(rows) == 2:
        a, b = rows["numba"], rows["numpy"]
        same_graph = np.array_equal(a[3], b[3]) and all(
            np.array_equal(a[2][i, : a[3][i]], b[2][i, : b[3][i]]) for i in range(args.n)
        )
        same_res = all(np.array_equal(x, y) for x, y in zip(a[4], b[4]))
        print(f"speedup build x{b[0] / a[0]:.1f}, search x{b[1] / a[1]:.1f}; "
              f"identical graph: {same_graph}, identical results: {same_res}")


if __name__ == "__main__":
    main()
