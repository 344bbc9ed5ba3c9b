"""Pure-numpy versions of the graph kernels (same signatures as ``_numba``)."""

from __future__ import annotations

from bisect import insort

import numpy as np


def sqdist(a, b):
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.dot(diff, diff))


def sqdist_batch(data, idx, q):
    diff = data[idx].astype(np.float64) - np.asarray(q, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)


def sort_pairs(ids, dists):
    o = np.lexsort((ids, dists))
    return ids[o], dists[o]


def greedy_search(data, adj, deg, entry, q, L, visited, tag):
    q64 = np.asarray(q, dtype=np.float64)
    visited[entry] = tag
    d0 = sqdist(data[entry], q64)
    beam = [(d0, int(entry))]
    expanded: set[int] = set()
    log: list[int] = []
    log_d: list[float] = []
    n_evals = 1
    while True:
        nxt = None
        for d, c in beam:
            if c not in expanded:
                nxt = (d, c)
                break
        if nxt is None:
            break
        d_c, c = nxt
        expanded.add(c)
        log.append(c)
        log_d.append(d_c)
        nbrs = adj[c, : deg[c]]
        nbrs = nbrs[visited[nbrs] != tag]
        if nbrs.size == 0:
            continue
        visited[nbrs] = tag
        ds = sqdist_batch(data, nbrs, q64)
        n_evals += nbrs.size
        for d, nb in zip(ds.tolist(), nbrs.tolist()):
            if len(beam) == L and (d, nb) > beam[-1]:
                continue
            insort(beam, (d, nb))
            if len(beam) > L:
                beam.pop()
    ids = np.array([c for _, c in beam], dtype=np.int64)
    dists = np.array([d for d, _ in beam], dtype=np.float64)
    return ids, dists, np.array(log, dtype=np.int64), np.array(log_d, dtype=np.float64), n_evals


def robust_prune(data, p, cand, cand_d, R, alpha):
    kept: list[int] = []
    prev = -1
    for c, dc in zip(np.asarray(cand).tolist(), np.asarray(cand_d).tolist()):
        if c == p or c == prev:
            continue
        prev = c
        if c in kept:
            continue
        if kept:
            occ = alpha * sqdist_batch(data, np.array(kept), data[c])
            if (occ < dc).any():
                continue
        kept.append(c)
        if len(kept) == R:
            break
    return np.array(kept, dtype=np.int64)


def add_reverse_edge(data, adj, deg, src, dst, R, alpha):
    row = adj[src, : deg[src]]
    if (row == dst).any():
        return
    if deg[src] < R:
        adj[src, deg[src]] = dst
        deg[src] += 1
        return
    ids = np.append(row.astype(np.int64), dst)
    ds = sqdist_batch(data, ids, data[src])
    ids, ds = sort_pairs(ids, ds)
    kept = robust_prune(data, src, ids, ds, R, alpha)
    adj[src, : kept.shape[0]] = kept
    deg[src] = kept.shape[0]


def insert_point(data, adj, deg, entry, node, L, R, alpha, visited, tag):
    ids, ds, log, log_d, n_evals = greedy_search(data, adj, deg, entry, data[node], L, visited, tag)
    cand, cand_d = sort_pairs(np.concatenate((ids, log)), np.concatenate((ds, log_d)))
    kept = robust_prune(data, node, cand, cand_d, R, alpha)
    adj[node, : kept.shape[0]] = kept
    deg[node] = kept.shape[0]
    for nb in kept.tolist():
        add_reverse_edge(data, adj, deg, nb, node, R, alpha)
    return n_evals


def build_incremental(data, adj, deg, order, entry, L, R, alpha, visited):
    visited[:] = 0
    tag = 0
    for node in np.asarray(order).tolist():
        if node == entry:
            continue
        tag += 1
        insert_point(data, adj, deg, entry, node, L, R, alpha, visited, tag)


def merge_partition(data, adj, deg, lo, hi, part_entry, centroids, me,
                    eta, k_merge, L, R, alpha, new_adj, new_deg, visited, record):
    c = centroids.shape[0]
    rec_off = np.zeros(hi - lo + 1, np.int64)
    rec_ids: list[np.ndarray] = []
    n_rec = 0
    visited[:] = 0
    tag = 0
    for x in range(lo, hi):
        own_ids = adj[x, : deg[x]].astype(np.int64)
        ids_parts = [own_ids]
        d_parts = [sqdist_batch(data, own_ids, data[x])]
        own = sqdist(data[x], centroids[me])
        cent_d = sqdist_batch(centroids, np.arange(c), data[x])
        for pj in range(c):
            if pj == me:
                continue
            if not (np.isinf(eta) or cent_d[pj] <= eta * own):
                continue
            tag += 1
            ids, ds, _, _, _ = greedy_search(data, adj, deg, part_entry[pj], data[x], L, visited, tag)
            ids_parts.append(ids[:k_merge])
            d_parts.append(ds[:k_merge])
        cs, cds = sort_pairs(np.concatenate(ids_parts), np.concatenate(d_parts))
        if record:
            uniq = cs[np.concatenate(([True], cs[1:] != cs[:-1]))] if cs.size else cs
            rec_ids.append(uniq)
            n_rec += uniq.size
            rec_off[x - lo + 1] = n_rec
        kept = robust_prune(data, x, cs, cds, R, alpha)
        new_adj[x, : kept.shape[0]] = kept
        new_deg[x] = kept.shape[0]
    flat = np.concatenate(rec_ids) if rec_ids else np.empty(0, np.int64)
    return rec_off, flat


def add_reverse_edges(data, adj, deg, src_adj, src_deg, R, alpha):
    for x in range(src_deg.shape[0]):
        for y in src_adj[x, : src_deg[x]].tolist():
            add_reverse_edge(data, adj, deg, y, x, R, alpha)
