"""Point Aggregation Graph construction.

A sampled fraction of the data (aggregation points) forms an in-memory
proximity graph; every other point (residual) joins the partition of one
aggregation point, optionally with redundant copies in a few more.

Radii are kept in squared-distance units, like every distance in the package.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cic import CicConfig, cic_build
from .core import Dataset
from .errors import InvalidArgumentError, InvariantError
from .graph import ProximityGraph, bridge_components
from .kernels import active as K

REDUNDANCY_STRATEGIES = ("none", "nearest_neighbor", "routing_path")

# Relative slack when re-checking stored distances against radii; the
# compiled and numpy distance paths may differ in the last ulp.
_RTOL = 1e-9


@dataclass
class PagConfig:
    p: float = 0.2
    lam: float = 1.5
    gamma1: float = 0.75
    gamma2: float = 0.9
    k_assign: int = 8
    search_L: int = 64
    redundancy: str = "nearest_neighbor"
    max_copies: int = 4
    cic: CicConfig = field(default_factory=lambda: CicConfig(R=16))
    capacity_override: int | None = None

    @property
    def capacity(self) -> int:
        if self.capacity_override is not None:
            return int(self.capacity_override)
        # lam / p is often a float hair above an integer (2 / 0.05).
        return max(1, math.ceil(self.lam / self.p - 1e-9))

    def validate(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise InvalidArgumentError(f"sample rate p must be in (0, 1), got {self.p}")
        if self.capacity_override is None and self.lam < 1.0:
            raise InvalidArgumentError("lambda must be >= 1")
        if self.capacity_override is not None and self.capacity_override < 0:
            raise InvalidArgumentError("capacity override must be >= 0")
        if not 0.0 <= self.gamma1 <= 1.0 or not 0.0 <= self.gamma2 <= 1.0:
            raise InvalidArgumentError("gamma1 and gamma2 must lie in [0, 1]")
        if self.k_assign < 1:
            raise InvalidArgumentError("k_assign must be >= 1")
        if self.redundancy not in REDUNDANCY_STRATEGIES:
            raise InvalidArgumentError(f"unknown redundancy strategy {self.redundancy!r}")
        if self.max_copies < 1:
            raise InvalidArgumentError("max_copies must be >= 1")
        self.cic.validate()


@dataclass
class PagIndex:
    """Graph over aggregation points plus per-node radius and partition lists.

    Per-node arrays are indexed by the graph's local row; partitions hold
    residual ``VectorId``s (the aggregation point itself is implicit).
    """

    graph: ProximityGraph
    radius: np.ndarray
    primary: list[list[int]]
    redundant: list[list[int]]
    capacity: int | None
    d_o: float
    n_points: int
    promoted: int = 0
    build_report: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.graph.dim

    @cached_property
    def radius_root(self) -> np.ndarray:
        """Radii as plain Euclidean lengths, for the early-stop rule."""
        return np.sqrt(self.radius)

    @property
    def n_aggregation(self) -> int:
        return self.graph.size

    @property
    def aggregation_ids(self) -> np.ndarray:
        return self.graph.node_ids

    def store_key(self, local: int) -> str:
        return partition_key(int(self.graph.ids[local]))

    def members(self, local: int) -> np.ndarray:
        """Payload order: aggregation point, primary members, redundant copies."""
        return np.array(
            [int(self.graph.ids[local])] + list(self.primary[local]) + list(self.redundant[local]),
            dtype=np.int64,
        )

    def primary_sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.primary], dtype=np.int64)

    def redundant_sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.redundant], dtype=np.int64)

    def primary_of(self) -> dict[int, int]:
        """Residual VectorId -> local row of its primary partition."""
        out: dict[int, int] = {}
        for a, mem in enumerate(self.primary):
            for x in mem:
                out[int(x)] = a
        return out


def partition_key(agg_id: int) -> str:
    return f"{agg_id % 256:02x}/{agg_id:012d}"


def percentile_index(gamma: float, length: int) -> int:
    return min(int(math.floor(gamma * length)), length - 1)


def sample_aggregation_points(n_or_ds, p: float, seed: int = 0) -> np.ndarray:
    """Uniform sample of ``ceil(p * n)`` ids (at least one), sorted."""
    n = len(n_or_ds) if isinstance(n_or_ds, Dataset) else int(n_or_ds)
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"sample rate p must be in (0, 1), got {p}")
    size = max(1, math.ceil(p * n - 1e-9))
    if size >= n:
        raise InvalidArgumentError(f"sample of {size} leaves no residual points out of {n}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def _neighbor_sqdists(g: ProximityGraph, i: int) -> np.ndarray:
    nb = g.adj[i, : g.deg[i]].astype(np.int64)
    return np.sort(K.sqdist_batch(g.vectors, nb, g.vectors[i]))


def compute_radii(g: ProximityGraph, gamma1: float, gamma2: float) -> tuple[np.ndarray, float]:
    """Per-node aggregation radius and the global cap ``d_o`` (squared units).

    A node's raw radius is its ``gamma1`` percentile neighbor distance; the
    cap is the ``gamma2`` percentile of the raw radii. Nodes without
    neighbors get the cap.
    """
    n = g.size
    raw = np.full(n, np.nan)
    for i in range(n):
        if g.deg[i] > 0:
            nd = _neighbor_sqdists(g, i)
            raw[i] = nd[percentile_index(gamma1, len(nd))]
    have = np.sort(raw[~np.isnan(raw)])
    d_o = float(have[percentile_index(gamma2, len(have))]) if len(have) else math.inf
    radius = np.where(np.isnan(raw), d_o, np.minimum(raw, d_o))
    return radius.astype(np.float64), d_o


def _build_sample_graph(ds: Dataset, cfg: PagConfig, seed: int, workers: int, timings: dict):
    t0 = time.perf_counter()
    agg = sample_aggregation_points(ds, cfg.p, seed)
    timings["sample"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    g = cic_build(ds.subset(agg), cfg.cic, seed, ids=agg, workers=workers, capacity=len(ds), timings=timings)
    timings["pg_total"] = time.perf_counter() - t0
    return agg, g


def _residuals(n: int, agg: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[agg] = False
    return np.flatnonzero(mask)


def build_naive_pag(ds: Dataset, cfg: PagConfig | None = None, seed: int = 0, workers: int = 1) -> PagIndex:
    """Assign every residual to the nearest aggregation point the graph finds."""
    cfg = cfg or PagConfig()
    cfg.validate()
    timings: dict = {}
    agg, g = _build_sample_graph(ds, cfg, seed, workers, timings)
    t0 = time.perf_counter()
    primary: list[list[int]] = [[] for _ in range(g.size)]
    radius = np.zeros(g.size)
    for x in _residuals(len(ds), agg).tolist():
        ids, ds_, _, _, _ = g.search_local(ds.vectors[x], max(1, cfg.search_L))
        a = int(ids[0])
        primary[a].append(x)
        radius[a] = max(radius[a], float(ds_[0]))
    timings["assign"] = time.perf_counter() - t0
    idx = PagIndex(
        graph=g, radius=radius, primary=primary, redundant=[[] for _ in range(g.size)],
        capacity=None, d_o=float(radius.max()) if g.size else 0.0, n_points=len(ds),
    )
    idx.build_report = {"mode": "naive", "timings": timings}
    return idx


def build_pag_drs(ds: Dataset, cfg: PagConfig | None = None, seed: int = 0, workers: int = 1) -> PagIndex:
    """Capacity- and radius-constrained assignment with promotion, then redundancy."""
    cfg = cfg or PagConfig()
    cfg.validate()
    timings: dict = {}
    agg, g = _build_sample_graph(ds, cfg, seed, workers, timings)
    t0 = time.perf_counter()
    radius_arr, d_o = compute_radii(g, cfg.gamma1, cfg.gamma2)
    timings["radii"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cap = cfg.capacity
    radius = radius_arr.tolist()
    primary: list[list[int]] = [[] for _ in range(g.size)]
    L = max(cfg.search_L, cfg.k_assign)
    promoted = 0
    for x in _residuals(len(ds), agg).tolist():
        ids, dists, _, _, _ = g.search_local(ds.vectors[x], L)
        placed = False
        for a, d in zip(ids[: cfg.k_assign].tolist(), dists[: cfg.k_assign].tolist()):
            if d <= radius[a] and len(primary[a]) < cap:
                primary[a].append(x)
                placed = True
                break
        if placed:
            continue
        i = g.insert(x, ds.vectors[x], L=cfg.cic.L_build)
        if g.deg[i] > 0:
            nd = _neighbor_sqdists(g, i)
            radius.append(min(d_o, float(nd[percentile_index(cfg.gamma1, len(nd))])))
        else:
            radius.append(d_o)
        primary.append([])
        promoted += 1
    # Re-pruning during promotions can cut a node's last inbound edge.
    bridge_components(g, cfg.cic.L_build)
    timings["assign"] = time.perf_counter() - t0

    idx = PagIndex(
        graph=g, radius=np.asarray(radius, dtype=np.float64), primary=primary,
        redundant=[[] for _ in range(g.size)], capacity=cap, d_o=d_o, n_points=len(ds),
        promoted=promoted,
    )
    t0 = time.perf_counter()
    if cfg.redundancy != "none" and cfg.max_copies > 1:
        add_redundancy(idx, ds, cfg.redundancy, cfg.max_copies, cfg.k_assign, cfg.search_L)
    timings["redundancy"] = time.perf_counter() - t0
    idx.build_report = {"mode": "drs", "timings": timings, "promoted": promoted}
    return idx


def occludes(d_a1_x: float, d_a2_x: float, d_a1_a2: float) -> bool:
    """a1 occludes a2 for x: a1 nearer to x, and a1-a2 closer than a2-x."""
    return d_a1_x < d_a2_x and d_a1_a2 < d_a2_x


def add_redundancy(
    index: PagIndex,
    ds: Dataset,
    strategy: str = "nearest_neighbor",
    max_copies: int = 4,
    k_assign: int = 8,
    L: int = 64,
) -> PagIndex:
    """Copy residual points into extra, mutually non-occluding partitions.

    Candidates come from the point's k nearest aggregation points or from the
    routing path of its graph search. A candidate is accepted only if no
    partition already holding the point occludes it and it occludes none of
    them. Each partition takes at most ``2 * capacity`` residual members.
    """
    if strategy not in REDUNDANCY_STRATEGIES:
        raise InvalidArgumentError(f"unknown redundancy strategy {strategy!r}")
    if max_copies < 1:
        raise InvalidArgumentError("max_copies must be >= 1")
    if strategy == "none" or max_copies == 1:
        return index
    g = index.graph
    total_cap = math.inf if index.capacity is None else 2 * index.capacity
    home = index.primary_of()
    L = max(L, k_assign)
    for x in sorted(home):
        a_star = home[x]
        q = ds.vectors[x]
        ids, dists, log, log_d, _ = g.search_local(q, L)
        if strategy == "nearest_neighbor":
            cand, cand_d = ids[:k_assign], dists[:k_assign]
        else:
            cand, cand_d = K.sort_pairs(log, log_d)
        kept = [a_star]
        kept_d = [K.sqdist(g.vectors[a_star], q)]
        for a2, d2 in zip(cand.tolist(), cand_d.tolist()):
            if len(kept) >= max_copies:
                break
            if a2 in kept:
                continue
            if len(index.primary[a2]) + len(index.redundant[a2]) >= total_cap:
                continue
            ok = True
            for a1, d1 in zip(kept, kept_d):
                d12 = K.sqdist(g.vectors[a1], g.vectors[a2])
                if occludes(d1, d2, d12) or occludes(d2, d1, d12):
                    ok = False
                    break
            if ok:
                index.redundant[a2].append(x)
                kept.append(a2)
                kept_d.append(d2)
    return index


def validate_index(index: PagIndex, ds: Dataset | None = None, min_reachable: float = 0.99) -> None:
    """Raise :class:`InvariantError` naming the first violated invariant."""
    g = index.graph
    n_agg = g.size
    if len(index.radius) != n_agg:
        raise InvariantError("radius-map", f"{len(index.radius)} radii for {n_agg} aggregation points")
    if len(index.primary) != n_agg or len(index.redundant) != n_agg:
        raise InvariantError("partition-directory", "partition lists do not match aggregation points")
    try:
        g.check_invariants(min_reachable)
    except AssertionError as e:
        raise InvariantError("graph", str(e)) from None

    agg = set(g.node_ids.tolist())
    seen: set[int] = set()
    total = 0
    for a, mem in enumerate(index.primary):
        for x in mem:
            if x in agg:
                raise InvariantError("conservation", f"aggregation point {x} listed as residual")
            if x in seen:
                raise InvariantError("conservation", f"point {x} has several primary partitions")
            seen.add(x)
        total += len(mem)
    if total + n_agg != index.n_points:
        raise InvariantError(
            "conservation", f"{total} primary members + {n_agg} aggregation points != {index.n_points}"
        )
    if index.capacity is not None:
        big = int(index.primary_sizes().max()) if n_agg else 0
        if big > index.capacity:
            raise InvariantError("capacity", f"partition holds {big} > {index.capacity} primary members")

    placements: dict[int, list[int]] = {}
    for a in range(n_agg):
        mem = list(index.primary[a]) + list(index.redundant[a])
        if len(set(mem)) != len(mem):
            raise InvariantError("redundancy-duplicates", f"partition of {g.ids[a]} repeats a member")
        if index.capacity is not None and len(mem) > 2 * index.capacity:
            raise InvariantError("redundancy-cap", f"partition of {g.ids[a]} holds {len(mem)} members")
        for x in mem:
            placements.setdefault(int(x), []).append(a)
    for mem in index.redundant:
        for x in mem:
            if x not in seen:
                raise InvariantError("redundancy", f"redundant copy of {x} has no primary partition")

    if ds is None:
        return
    if ds.count != index.n_points:
        raise InvariantError("conservation", "dataset size does not match index")
    for a, mem in enumerate(index.primary):
        if not mem:
            continue
        d = K.sqdist_batch(ds.vectors, np.asarray(mem, dtype=np.int64), g.vectors[a])
        lim = index.radius[a] * (1 + _RTOL)
        if (d > lim).any():
            x = mem[int(np.argmax(d - lim))]
            raise InvariantError("radius-admissibility", f"point {x} lies outside radius of {g.ids[a]}")
    for x, parts in placements.items():
        if len(parts) < 2:
            continue
        q = ds.vectors[x]
        dx = [K.sqdist(g.vectors[a], q) for a in parts]
        for i in range(len(parts)):
            for j in range(len(parts)):
                if i == j:
                    continue
                d12 = K.sqdist(g.vectors[parts[i]], g.vectors[parts[j]])
                if occludes(dx[i], dx[j], d12):
                    raise InvariantError(
                        "occlusion-soundness",
                        f"point {x}: partition {g.ids[parts[i]]} occludes {g.ids[parts[j]]}",
                    )
