"""Concurrent index construction: partition, build per partition, merge.

Phase 1 builds one graph per k-means partition; phase 2 lets every point
search the graphs of nearby partitions (centroid distance within ``eta`` times
its own centroid distance) and prunes the union into its final neighbor list.
Both phases run on a thread pool; the compiled kernels release the GIL.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2, vq

from .core import Dataset
from .errors import InvalidArgumentError
from .graph import ProximityGraph, add_edge, bridge_components, build_graph, medoid_index
from .kernels import active as K


@dataclass
class CicConfig:
    c: int = 1
    eta: float = 2.0
    k_merge: int = 8
    R: int = 16
    alpha: float = 1.0
    L_build: int = 64
    kmeans_iters: int = 10

    def validate(self, n: int | None = None) -> None:
        if self.c < 1:
            raise InvalidArgumentError("partition count c must be >= 1")
        if n is not None and self.c > n:
            raise InvalidArgumentError(f"partition count c={self.c} exceeds point count {n}")
        if not self.eta >= 1.0:
            raise InvalidArgumentError("eta must be >= 1")
        if self.k_merge < 1:
            raise InvalidArgumentError("k_merge must be >= 1")


@dataclass
class PartitionAssignment:
    centroids: np.ndarray
    membership: np.ndarray

    @property
    def c(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.membership, minlength=self.c)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.membership == j)


def _repair_empty(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> None:
    c = centroids.shape[0]
    while True:
        sizes = np.bincount(labels, minlength=c)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return
        big = int(np.argmax(sizes))
        rows = np.flatnonzero(labels == big)
        d = K.sqdist_batch(X, rows, centroids[big].astype(np.float64))
        far = rows[int(np.lexsort((rows, -d))[0])]
        labels[far] = empty[0]
        centroids[empty[0]] = X[far]
        centroids[big] = X[labels == big].mean(axis=0)


def split_dataset(
    ds_subset: Dataset, c: int, seed: int = 0, iters: int = 10, sample_size: int | None = None
) -> PartitionAssignment:
    """Budgeted k-means on a sample, then nearest-centroid assignment of all points."""
    n = len(ds_subset)
    if c < 1 or c > n:
        raise InvalidArgumentError(f"c must be in [1, {n}], got {c}")
    X = ds_subset.vectors
    if c == n:
        return PartitionAssignment(X.astype(np.float64).copy(), np.arange(n, dtype=np.int64))
    if c == 1:
        return PartitionAssignment(X.astype(np.float64).mean(axis=0, keepdims=True), np.zeros(n, np.int64))
    rng = np.random.default_rng(seed)
    m = min(n, sample_size or max(64 * c, 10_000))
    sample = X if m == n else X[np.sort(rng.choice(n, m, replace=False))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cent, _ = kmeans2(sample.astype(np.float64), c, iter=iters, minit="++", seed=rng, missing="warn")
    labels, _ = vq(X.astype(np.float64), cent, check_finite=False)
    labels = labels.astype(np.int64)
    cent = cent.copy()
    _repair_empty(X, labels, cent)
    sums = np.zeros_like(cent)
    np.add.at(sums, labels, X.astype(np.float64))
    cent = sums / np.bincount(labels, minlength=c)[:, None]
    return PartitionAssignment(cent, labels)


@dataclass
class CicTrace:
    """Pre-prune candidate sets, recorded on request (VectorIds)."""

    candidates: dict[int, set[int]]


def cic_build(
    ds_subset: Dataset,
    cfg: CicConfig | None = None,
    seed: int = 0,
    ids=None,
    workers: int = 1,
    capacity: int | None = None,
    assignment: PartitionAssignment | None = None,
    trace: bool = False,
    timings: dict | None = None,
):
    """Build one graph over ``ds_subset`` via partitioned construction.

    Returns the graph, or ``(graph, CicTrace)`` when ``trace`` is set.
    Phase wall-clock seconds are written into ``timings`` when given.
    """
    timings = {} if timings is None else timings
    cfg = cfg or CicConfig()
    n = len(ds_subset)
    cfg.validate(n)
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if cfg.c == 1 and not trace:
        t0 = time.perf_counter()
        g = build_graph(ds_subset, cfg.R, cfg.alpha, cfg.L_build, seed, ids=ids, capacity=capacity)
        timings.update(split=0.0, pg_build=time.perf_counter() - t0, merge=0.0)
        return g

    t0 = time.perf_counter()
    part = assignment or split_dataset(ds_subset, cfg.c, seed, cfg.kmeans_iters)
    timings["split"] = time.perf_counter() - t0
    c = part.c
    perm = np.lexsort((np.arange(n), part.membership))
    counts = part.sizes()
    bounds = np.concatenate(([0], np.cumsum(counts)))

    g = ProximityGraph(ds_subset.dim, cfg.R, cfg.alpha, cfg.L_build, capacity=max(n, capacity or n))
    g.vectors[:n] = ds_subset.vectors[perm]
    g.ids[:n] = ids[perm]
    g._local = {int(v): i for i, v in enumerate(g.ids[:n].tolist())}
    g.size = n
    data = g.vectors[:n]
    adj = np.zeros((n, cfg.R), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    entries = np.zeros(c, dtype=np.int64)
    seeds = np.random.SeedSequence(seed).spawn(c)

    def build_part(j: int) -> None:
        lo, hi = int(bounds[j]), int(bounds[j + 1])
        sub = data[lo:hi]
        e = medoid_index(sub)
        entries[j] = lo + e
        order = np.random.default_rng(seeds[j]).permutation(hi - lo).astype(np.int64)
        visited = np.zeros(hi - lo, dtype=np.int32)
        K.build_incremental(sub, adj[lo:hi], deg[lo:hi], order, e, cfg.L_build, cfg.R, cfg.alpha, visited)
        adj[lo:hi] += lo

    new_adj = np.zeros_like(adj)
    new_deg = np.zeros_like(deg)
    cent = np.ascontiguousarray(part.centroids, dtype=np.float64)

    def merge_part(j: int):
        lo, hi = int(bounds[j]), int(bounds[j + 1])
        visited = np.zeros(n, dtype=np.int32)
        return K.merge_partition(
            data, adj, deg, lo, hi, entries, cent, j, float(cfg.eta), cfg.k_merge,
            cfg.L_build, cfg.R, cfg.alpha, new_adj, new_deg, visited, bool(trace),
        )

    workers = max(1, int(workers))
    with ThreadPoolExecutor(workers) as pool:
        t0 = time.perf_counter()
        list(pool.map(build_part, range(c)))
        timings["pg_build"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        recs = list(pool.map(merge_part, range(c)))

    g.adj[:n] = new_adj
    g.deg[:n] = new_deg
    # Pruned merge lists alone can strand nodes; mirror each edge like the
    # incremental build does.
    K.add_reverse_edges(data, g.adj[:n], g.deg[:n], new_adj, new_deg, cfg.R, cfg.alpha)
    g.entry = int(np.flatnonzero(perm == medoid_index(ds_subset.vectors))[0])
    # Each partition graph was built outward from its medoid; give the global
    # entry a direct route to every one of them.
    for e in entries.tolist():
        if e != g.entry:
            add_edge(g, g.entry, e)
            add_edge(g, e, g.entry)
    bridge_components(g, cfg.L_build)
    timings["merge"] = time.perf_counter() - t0
    if not trace:
        return g
    cands: dict[int, set[int]] = {}
    for j, (off, flat) in enumerate(recs):
        lo = int(bounds[j])
        for r in range(len(off) - 1):
            cands[int(g.ids[lo + r])] = set(g.ids[flat[off[r]:off[r + 1]]].tolist())
    return g, CicTrace(cands)
