"""Query execution over a PAG: graph traversal interleaved with partition fetches.

The traversal keeps a beam of ``L`` aggregation points and a timeline of
every point it has scored. Whenever an expansion fails to improve the best
distance seen so far, the early-stop rule is checked and, if the search goes
on, the nearest not-yet-fetched timeline entry has its partition requested.
In async mode fetched partitions are scanned as they arrive while traversal
continues; in sync mode each fetch blocks. Both modes issue the same fetches
in the same order, so they return the same results.
"""

from __future__ import annotations

import bisect
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import as_vector
from .errors import EmptyIndexError, IndexCorruptionError, InvalidArgumentError, NotFoundError
from .kernels import active as K
from .pag import PagIndex
from .store import PartitionStore

MODES = ("sync", "async")


@dataclass
class SearchParams:
    k: int = 10
    L: int = 64
    rho: float = 1.0
    max_probes: int | None = None
    mode: str = "async"

    def validate(self) -> None:
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.L < 1:
            raise InvalidArgumentError("L must be >= 1")
        if not self.rho >= 1.0:
            raise InvalidArgumentError("rho must be >= 1")
        if self.max_probes is not None and self.max_probes < 1:
            raise InvalidArgumentError("max_probes must be >= 1")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")

    def resolved_max_probes(self, index: PagIndex) -> float:
        """Explicit cap, else ``max(8, ceil(rho * k / mean partition size))``."""
        if self.max_probes is not None:
            return self.max_probes
        if math.isinf(self.rho):
            return math.inf
        part_size = index.n_points / max(1, index.n_aggregation)
        return max(8, math.ceil(self.rho * self.k / part_size))


@dataclass
class SearchStats:
    distance_evals: int = 0
    partitions_probed: int = 0
    io_wait: float = 0.0
    traversal_time: float = 0.0
    points_scanned: int = 0
    expansions: int = 0
    stopped_early: bool = False
    probed: list[int] = field(default_factory=list)


def should_stop(d_min: float, r_min: float, d_cur: float, r_cur: float, rho: float) -> bool:
    """True iff ``d_cur >= rho * (d_min + r_min + r_cur)``; all plain distances."""
    if math.isinf(rho):
        return False
    return d_cur >= rho * (d_min + r_min + r_cur)


class _Scanner:
    def __init__(self, q: np.ndarray, stats: SearchStats) -> None:
        self.q = q
        self.stats = stats
        self.best: dict[int, float] = {}

    def scan(self, blob) -> None:
        n = len(blob.ids)
        d = K.sqdist_batch(blob.vectors, np.arange(n, dtype=np.int64), self.q)
        self.stats.points_scanned += n
        self.stats.distance_evals += n
        best = self.best
        for vid, dist in zip(blob.ids.tolist(), d.tolist()):
            if vid not in best:
                best[vid] = dist

    def top(self, k: int) -> list[tuple[int, float]]:
        if not self.best:
            return []
        ids = np.fromiter(self.best.keys(), dtype=np.int64, count=len(self.best))
        ds = np.fromiter(self.best.values(), dtype=np.float64, count=len(self.best))
        order = np.lexsort((ids, ds))[:k]
        return [(int(ids[i]), float(ds[i])) for i in order]


def _fetch(store: PartitionStore, key: str, blocking: bool):
    try:
        return store.get(key) if blocking else store.get_async(key)
    except NotFoundError as e:
        raise IndexCorruptionError(f"partition {key!r} listed in the index is missing: {e}") from None


def _resolve(fut, key: str):
    try:
        return fut.result()
    except NotFoundError as e:
        raise IndexCorruptionError(f"partition {key!r} listed in the index is missing: {e}") from None


def _run(index: PagIndex, store: PartitionStore, q, params: SearchParams, blocking: bool):
    params.validate()
    g = index.graph
    n = g.size
    if n == 0:
        raise EmptyIndexError("index has no aggregation points")
    q = as_vector(q, g.dim)
    radius = index.radius_root
    max_probes = params.resolved_max_probes(index)
    L = params.L
    stats = SearchStats()
    scanner = _Scanner(q, stats)
    t_start = time.perf_counter()

    seen = np.zeros(n, dtype=bool)
    expanded = np.zeros(n, dtype=bool)
    fetched = np.zeros(n, dtype=bool)
    e = g.entry
    d0 = K.sqdist(g.vectors[e], q)
    stats.distance_evals += 1
    seen[e] = True
    beam = [(d0, int(g.ids[e]), e)]
    frontier = [(d0, int(g.ids[e]), e)]
    timeline = [(d0, int(g.ids[e]), e)]
    best = (d0, int(g.ids[e]), e)
    pending: list = []

    def poll() -> None:
        still = []
        for key, fut in pending:
            if fut.done():
                scanner.scan(_resolve(fut, key))
            else:
                still.append((key, fut))
        pending[:] = still

    while True:
        cur = None
        for item in beam:
            if not expanded[item[2]]:
                cur = item
                break
        if cur is None:
            while frontier and expanded[frontier[0][2]]:
                heapq.heappop(frontier)
            if frontier:
                cur = heapq.heappop(frontier)

        improved = False
        if cur is not None:
            c = cur[2]
            expanded[c] = True
            stats.expansions += 1
            nb = g.adj[c, : g.deg[c]]
            nb = nb[~seen[nb]].astype(np.int64)
            if nb.size:
                seen[nb] = True
                dn = K.sqdist_batch(g.vectors, nb, q)
                stats.distance_evals += nb.size
                vids = g.ids[nb]
                for dd, vid, loc in zip(dn.tolist(), vids.tolist(), nb.tolist()):
                    item = (dd, vid, loc)
                    heapq.heappush(frontier, item)
                    heapq.heappush(timeline, item)
                    if len(beam) < L or item < beam[-1]:
                        bisect.insort(beam, item)
                        if len(beam) > L:
                            beam.pop()
                    if item < best:
                        best = item
                        improved = True
            if not blocking and pending:
                poll()
            if improved:
                continue

        # Local optimum, or the graph is exhausted.
        if stats.partitions_probed >= max_probes:
            break
        while timeline and fetched[timeline[0][2]]:
            heapq.heappop(timeline)
        if not timeline:
            if cur is None:
                break
            continue
        nxt = timeline[0]
        here = cur if cur is not None else nxt
        if should_stop(math.sqrt(best[0]), radius[best[2]], math.sqrt(here[0]), radius[here[2]], params.rho):
            stats.stopped_early = True
            break
        heapq.heappop(timeline)
        fetched[nxt[2]] = True
        stats.partitions_probed += 1
        stats.probed.append(nxt[1])
        key = index.store_key(nxt[2])
        if blocking:
            t0 = time.perf_counter()
            blob = _fetch(store, key, True)
            stats.io_wait += time.perf_counter() - t0
            scanner.scan(blob)
        else:
            pending.append((key, _fetch(store, key, False)))
            poll()

    for key, fut in pending:
        t0 = time.perf_counter()
        blob = _resolve(fut, key)
        stats.io_wait += time.perf_counter() - t0
        scanner.scan(blob)
    stats.traversal_time = max(0.0, time.perf_counter() - t_start - stats.io_wait)
    return scanner.top(params.k), stats


def search(index: PagIndex, store: PartitionStore, q, params: SearchParams | None = None):
    """Ranked ``(VectorId, squared distance)`` list of length <= k, and stats.

    Runs overlapped unless ``params.mode == "sync"``.
    """
    params = params or SearchParams()
    return _run(index, store, q, params, blocking=params.mode == "sync")


def search_sync(index: PagIndex, store: PartitionStore, q, params: SearchParams | None = None):
    """Same contract as :func:`search`, but every fetch blocks the traversal."""
    return _run(index, store, q, params or SearchParams(), blocking=True)


def exhaustive_scan(index: PagIndex, store: PartitionStore, q, k: int) -> list[tuple[int, float]]:
    """Scan every partition; the reference answer for a fully probed search."""
    q = as_vector(q, index.dim)
    scanner = _Scanner(q, SearchStats())
    for a in range(index.n_aggregation):
        scanner.scan(store.get(index.store_key(a)))
    return scanner.top(k)


__all__ = ["SearchParams", "SearchStats", "should_stop", "search", "search_sync", "exhaustive_scan", "MODES"]
