"""Flat, alpha-pruned proximity graph (Vamana style) over a set of vectors.

Nodes are addressed by local row number internally and by ``VectorId`` in the
public API. The graph owns a copy of its node vectors so the compiled kernels
see one contiguous array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import Dataset, as_vector
from .errors import EmptyIndexError, FormatError, InvalidArgumentError
from .kernels import active as K

GRAPH_MAGIC = b"PAGG"
GRAPH_VERSION = 1
_HEADER = struct.Struct("<4sIQIQdI")


@dataclass
class SearchResult:
    ids: np.ndarray
    dists: np.ndarray
    visit_log: np.ndarray
    visit_dists: np.ndarray
    distance_evals: int = 0

    def __len__(self) -> int:
        return len(self.ids)


class Workspace:
    """Per-thread visited-marker scratch for graph searches."""

    def __init__(self, capacity: int):
        self.visited = np.zeros(max(1, capacity), dtype=np.int32)
        self.tag = 0

    def next_tag(self, capacity: int) -> int:
        if self.visited.shape[0] < capacity:
            grown = np.zeros(max(capacity, 2 * self.visited.shape[0]), dtype=np.int32)
            grown[: self.visited.shape[0]] = self.visited
            self.visited = grown
        self.tag += 1
        if self.tag >= np.iinfo(np.int32).max:
            self.visited[:] = 0
            self.tag = 1
        return self.tag


class ProximityGraph:
    def __init__(self, dim: int, R: int, alpha: float = 1.0, L_build: int = 64, capacity: int = 16):
        if R < 1:
            raise InvalidArgumentError("R must be >= 1")
        if alpha < 1.0:
            raise InvalidArgumentError("alpha must be >= 1")
        if L_build < 1:
            raise InvalidArgumentError("L_build must be >= 1")
        self.dim = int(dim)
        self.R = int(R)
        self.alpha = float(alpha)
        self.L_build = int(L_build)
        capacity = max(1, int(capacity))
        self.vectors = np.zeros((capacity, self.dim), dtype=np.float32)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.adj = np.zeros((capacity, self.R), dtype=np.int32)
        self.deg = np.zeros(capacity, dtype=np.int32)
        self.size = 0
        self.entry = -1
        self._local: dict[int, int] = {}
        self._ws = Workspace(capacity)

    # -- basic accessors -------------------------------------------------

    def __len__(self) -> int:
        return self.size

    def __contains__(self, vid: int) -> bool:
        return int(vid) in self._local

    @property
    def capacity(self) -> int:
        return self.vectors.shape[0]

    @property
    def node_ids(self) -> np.ndarray:
        return self.ids[: self.size]

    @property
    def entry_id(self) -> int:
        if self.size == 0:
            raise EmptyIndexError("graph is empty")
        return int(self.ids[self.entry])

    def local(self, vid: int) -> int:
        return self._local[int(vid)]

    def vector(self, vid: int) -> np.ndarray:
        return self.vectors[self._local[int(vid)]]

    def neighbors(self, vid: int) -> np.ndarray:
        i = self._local[int(vid)]
        return self.ids[self.adj[i, : self.deg[i]]]

    def local_neighbors(self, i: int) -> np.ndarray:
        return self.adj[i, : self.deg[i]]

    def max_degree(self) -> int:
        return int(self.deg[: self.size].max()) if self.size else 0

    def reserve(self, capacity: int) -> None:
        if capacity <= self.capacity:
            return
        cap = max(capacity, 2 * self.capacity)
        for name, fill in (("vectors", 0), ("ids", -1), ("adj", 0), ("deg", 0)):
            old = getattr(self, name)
            new = np.full((cap,) + old.shape[1:], fill, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def _append(self, vid: int, vec: np.ndarray) -> int:
        vid = int(vid)
        if vid in self._local:
            raise InvalidArgumentError(f"id {vid} already in graph")
        self.reserve(self.size + 1)
        i = self.size
        self.vectors[i] = vec
        self.ids[i] = vid
        self.deg[i] = 0
        self._local[vid] = i
        self.size += 1
        return i

    # -- search / mutation -----------------------------------------------

    def search(self, q, L: int, k: int, ws: Workspace | None = None) -> SearchResult:
        """Beam search (width ``L``) from the entry point; returns ``k`` best."""
        if self.size == 0:
            raise EmptyIndexError("graph is empty")
        if L < 1 or k < 1:
            raise InvalidArgumentError("L and k must be >= 1")
        if k > L:
            raise InvalidArgumentError(f"k ({k}) must not exceed L ({L})")
        q = as_vector(q, self.dim)
        ws = ws or self._ws
        tag = ws.next_tag(self.capacity)
        ids, ds, log, log_d, ne = K.greedy_search(
            self.vectors, self.adj, self.deg, self.entry, q, int(L), ws.visited, tag
        )
        return SearchResult(
            ids=self.ids[ids[:k]], dists=ds[:k], visit_log=self.ids[log], visit_dists=log_d,
            distance_evals=int(ne),
        )

    def search_local(self, q: np.ndarray, L: int, ws: Workspace | None = None):
        """Raw kernel call; local indices, full beam."""
        ws = ws or self._ws
        tag = ws.next_tag(self.capacity)
        return K.greedy_search(self.vectors, self.adj, self.deg, self.entry, q, int(L), ws.visited, tag)

    def insert(self, vid: int, vec, L: int | None = None, ws: Workspace | None = None) -> int:
        """Add a node, link it by search + prune, add pruned reverse edges."""
        vec = as_vector(vec, self.dim)
        i = self._append(vid, vec)
        if self.size == 1:
            self.entry = i
            return i
        ws = ws or self._ws
        tag = ws.next_tag(self.capacity)
        K.insert_point(
            self.vectors, self.adj, self.deg, self.entry, i, int(L or self.L_build),
            self.R, self.alpha, ws.visited, tag,
        )
        return i

    # -- structure checks ------------------------------------------------

    def reachable_fraction(self) -> float:
        if self.size == 0:
            return 0.0
        return float(self.reachable_mask().mean())

    def reachable_mask(self) -> np.ndarray:
        """Nodes reachable from the entry point by BFS."""
        seen = np.zeros(self.size, dtype=bool)
        if self.size:
            _spread(self, seen, self.entry)
        return seen

    def check_invariants(self, min_reachable: float = 0.99) -> None:
        n = self.size
        if n == 0:
            return
        if self.max_degree() > self.R:
            raise AssertionError(f"out-degree {self.max_degree()} exceeds R={self.R}")
        for i in range(n):
            row = self.adj[i, : self.deg[i]]
            if (row < 0).any() or (row >= n).any():
                raise AssertionError(f"node {self.ids[i]} has a dangling edge")
            if (row == i).any():
                raise AssertionError(f"node {self.ids[i]} has a self-loop")
            if len(np.unique(row)) != len(row):
                raise AssertionError(f"node {self.ids[i]} has duplicate edges")
        frac = self.reachable_fraction()
        if frac < min_reachable:
            raise AssertionError(f"only {frac:.4f} of nodes reachable from entry point")

    def adjacency_dict(self) -> dict[int, list[int]]:
        return {int(self.ids[i]): self.ids[self.adj[i, : self.deg[i]]].tolist() for i in range(self.size)}

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        n = self.size
        deg = self.deg[:n].astype(np.uint64)
        offsets = np.zeros(n + 1, dtype="<u8")
        np.cumsum(deg, out=offsets[1:])
        nbrs = np.concatenate([self.adj[i, : self.deg[i]] for i in range(n)]) if n else np.empty(0, np.int32)
        header = _HEADER.pack(
            GRAPH_MAGIC, GRAPH_VERSION, n, self.R,
            int(self.ids[self.entry]) if n else 0, self.alpha, self.L_build,
        )
        return b"".join([
            header,
            self.ids[:n].astype("<u8").tobytes(),
            offsets.tobytes(),
            self.ids[nbrs.astype(np.int64)].astype("<u8").tobytes() if n else b"",
        ])

    @classmethod
    def from_bytes(cls, buf: bytes, vectors: np.ndarray, capacity: int | None = None) -> "ProximityGraph":
        """Rebuild from :meth:`to_bytes`; ``vectors`` rows follow node order."""
        if len(buf) < _HEADER.size:
            raise FormatError("graph header truncated", offset=len(buf))
        magic, version, n, R, entry, alpha, L_build = _HEADER.unpack_from(buf, 0)
        if magic != GRAPH_MAGIC:
            raise FormatError("bad graph magic", offset=0)
        if version != GRAPH_VERSION:
            raise FormatError(f"unsupported graph version {version}", offset=4)
        pos = _HEADER.size
        need = pos + 8 * n + 8 * (n + 1)
        if len(buf) < need:
            raise FormatError("graph arrays truncated", offset=len(buf))
        ids = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).astype(np.int64)
        pos += 8 * n
        offsets = np.frombuffer(buf, dtype="<u8", count=n + 1, offset=pos).astype(np.int64)
        pos += 8 * (n + 1)
        m = int(offsets[-1]) if n else 0
        if len(buf) != pos + 8 * m:
            raise FormatError("graph neighbor array has wrong length", offset=pos)
        nbr_ids = np.frombuffer(buf, dtype="<u8", count=m, offset=pos).astype(np.int64)
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.shape[0] != n:
            raise FormatError(f"expected {n} node vectors, got {vectors.shape[0]}")
        g = cls(vectors.shape[1] if vectors.ndim == 2 else 1, R, alpha, L_build, capacity=max(n, capacity or n))
        for i in range(n):
            g._append(ids[i], vectors[i])
        try:
            loc = np.array([g._local[int(v)] for v in nbr_ids], dtype=np.int32) if m else np.empty(0, np.int32)
        except KeyError as e:
            raise FormatError(f"neighbor {e.args[0]} is not a node", offset=pos) from None
        for i in range(n):
            a, b = offsets[i], offsets[i + 1]
            if b - a > R:
                raise FormatError(f"node {ids[i]} exceeds degree bound", offset=pos + 8 * int(a))
            g.adj[i, : b - a] = loc[a:b]
            g.deg[i] = b - a
        if n:
            if int(entry) not in g._local:
                raise FormatError("entry point is not a node", offset=0)
            g.entry = g._local[int(entry)]
        return g


def medoid_index(vectors: np.ndarray) -> int:
    """Row closest to the mean (smaller row on ties)."""
    mean = vectors.astype(np.float64).mean(axis=0)
    d = K.sqdist_batch(vectors, np.arange(vectors.shape[0]), mean)
    return int(np.lexsort((np.arange(len(d)), d))[0])


def greedy_search(g: ProximityGraph, q, L: int, K: int) -> SearchResult:
    return g.search(q, L, K)


def build_graph(
    ds_subset: Dataset,
    R: int = 16,
    alpha: float = 1.0,
    L_build: int = 64,
    seed: int = 0,
    ids=None,
    capacity: int | None = None,
) -> ProximityGraph:
    """Incremental build in a seeded random order, starting from the medoid.

    ``ids`` maps subset rows to dataset ``VectorId``s (default: row numbers).
    """
    n = len(ds_subset)
    if n < 1:
        raise InvalidArgumentError("cannot build a graph over an empty set")
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    g = ProximityGraph(ds_subset.dim, R, alpha, L_build, capacity=max(n, capacity or n))
    g.vectors[:n] = ds_subset.vectors
    g.ids[:n] = ids
    g._local = {int(v): i for i, v in enumerate(ids.tolist())}
    if len(g._local) != n:
        raise InvalidArgumentError("duplicate ids in graph build")
    g.size = n
    g.entry = medoid_index(ds_subset.vectors)
    order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    visited = np.zeros(g.capacity, dtype=np.int32)
    K.build_incremental(g.vectors, g.adj, g.deg, order, g.entry, int(L_build), int(R), float(alpha), visited)
    bridge_components(g, int(L_build))
    return g


def _spread(g: ProximityGraph, seen: np.ndarray, start: int) -> None:
    """Mark everything reachable from ``start`` in ``seen``, level by level."""
    seen[start] = True
    frontier = np.array([start], dtype=np.int64)
    cols = np.arange(g.R)
    while frontier.size:
        rows = g.adj[frontier]
        nb = rows[cols[None, :] < g.deg[frontier][:, None]]
        nb = np.unique(nb[~seen[nb]])
        seen[nb] = True
        frontier = nb.astype(np.int64)


def add_edge(g: ProximityGraph, src: int, dst: int) -> None:
    """Add src -> dst, evicting src's farthest neighbor when full."""
    row = g.adj[src, : g.deg[src]]
    if dst in row:
        return
    if g.deg[src] < g.R:
        g.adj[src, g.deg[src]] = dst
        g.deg[src] += 1
        return
    d = K.sqdist_batch(g.vectors, row.astype(np.int64), g.vectors[src])
    g.adj[src, int(np.argmax(d))] = dst


def bridge_components(g: ProximityGraph, L: int) -> int:
    """Connect every component the entry point cannot reach; returns links made.

    Pruning can leave a well separated cluster with no inbound edge, and the
    partitioned build's η filter can skip a far partition entirely. For each
    stranded component, search the reachable graph for one of its nodes and
    link it to the nearest hit both ways. Nodes below the degree bound are
    preferred as the reachable end.
    """
    made = 0
    for _ in range(g.size):
        seen = g.reachable_mask()
        if seen.all():
            break
        for r in np.flatnonzero(~seen).tolist():
            if seen[r]:
                continue
            ids, _, _, _, _ = g.search_local(g.vectors[r], max(L, 1))
            hits = [int(i) for i in ids if seen[i]]
            free = [i for i in hits if g.deg[i] < g.R]
            u = free[0] if free else hits[0]
            add_edge(g, u, r)
            add_edge(g, r, u)
            made += 1
            _spread(g, seen, r)
        # An eviction in add_edge can strand a node again; the outer loop rechecks.
    return made


def complete_graph(ds_subset: Dataset, ids=None) -> ProximityGraph:
    """Every node linked to every other (R = n - 1); for exactness tests."""
    n = len(ds_subset)
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    g = ProximityGraph(ds_subset.dim, max(1, n - 1), 1.0, max(1, n), capacity=n)
    for i in range(n):
        g._append(ids[i], ds_subset.vectors[i])
    for i in range(n):
        row = [j for j in range(n) if j != i]
        g.adj[i, : len(row)] = row
        g.deg[i] = len(row)
    g.entry = medoid_index(ds_subset.vectors)
    return g


def prune_neighbors(
    ds: Dataset, p: int, candidates, R: int, alpha: float = 1.0
) -> list[int]:
    """Occlusion-prune ``candidates`` [(VectorId, dist to p)] sorted ascending.

    Candidate c is dropped when an already-kept b has ``alpha * d(b, c) < d(p, c)``.
    """
    if not candidates:
        return []
    cand = np.array([c for c, _ in candidates], dtype=np.int64)
    cand_d = np.array([d for _, d in candidates], dtype=np.float64)
    return K.robust_prune(ds.vectors, int(p), cand, cand_d, int(R), float(alpha)).tolist()


def insert(g: ProximityGraph, ds: Dataset, vid: int) -> ProximityGraph:
    g.insert(vid, ds.vectors[int(vid)])
    return g
