"""Compiled graph kernels.

All indices are local row numbers into ``data``/``adj``. Candidate lists are
ordered by ``(distance, index)`` so equal distances resolve to the smaller
index. ``visited`` is a per-thread int32 scratch array; a node counts as seen
when ``visited[node] == tag``.
"""

from __future__ import annotations

import numpy as np

from .._accel import njit


@njit
def sqdist(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        t = np.float64(a[i]) - np.float64(b[i])
        s += t * t
    return s


@njit
def sqdist_batch(data, idx, q):
    out = np.empty(idx.shape[0], np.float64)
    for j in range(idx.shape[0]):
        out[j] = sqdist(data[idx[j]], q)
    return out


@njit
def sort_pairs(ids, dists):
    o = np.argsort(ids, kind="mergesort")
    ids = ids[o]
    dists = dists[o]
    o = np.argsort(dists, kind="mergesort")
    return ids[o], dists[o]


@njit
def greedy_search(data, adj, deg, entry, q, L, visited, tag):
    """Beam search; returns (ids, dists, visit_log, visit_dists, n_evals)."""
    bd = np.empty(L, np.float64)
    bi = np.empty(L, np.int64)
    bx = np.zeros(L, np.bool_)
    log = np.empty(max(16, L), np.int64)
    log_d = np.empty(max(16, L), np.float64)
    n_log = 0
    visited[entry] = tag
    bd[0] = sqdist(data[entry], q)
    bi[0] = entry
    n_b = 1
    n_evals = 1
    while True:
        pos = -1
        for i in range(n_b):
            if not bx[i]:
                pos = i
                break
        if pos < 0:
            break
        bx[pos] = True
        c = bi[pos]
        if n_log == log.shape[0]:
            log2 = np.empty(2 * n_log, np.int64)
            log2[:n_log] = log
            log = log2
            logd2 = np.empty(2 * n_log, np.float64)
            logd2[:n_log] = log_d
            log_d = logd2
        log[n_log] = c
        log_d[n_log] = bd[pos]
        n_log += 1
        for j in range(deg[c]):
            nb = adj[c, j]
            if visited[nb] == tag:
                continue
            visited[nb] = tag
            d = sqdist(data[nb], q)
            n_evals += 1
            if n_b == L and (d > bd[L - 1] or (d == bd[L - 1] and nb > bi[L - 1])):
                continue
            ip = n_b
            while ip > 0 and (bd[ip - 1] > d or (bd[ip - 1] == d and bi[ip - 1] > nb)):
                ip -= 1
            last = n_b if n_b < L else L - 1
            k = last
            while k > ip:
                bd[k] = bd[k - 1]
                bi[k] = bi[k - 1]
                bx[k] = bx[k - 1]
                k -= 1
            bd[ip] = d
            bi[ip] = nb
            bx[ip] = False
            if n_b < L:
                n_b += 1
    return bi[:n_b].copy(), bd[:n_b].copy(), log[:n_log].copy(), log_d[:n_log].copy(), n_evals


@njit
def robust_prune(data, p, cand, cand_d, R, alpha):
    """Occlusion pruning over candidates sorted by (distance, index)."""
    out = np.empty(R, np.int64)
    n_out = 0
    prev = -1
    for i in range(cand.shape[0]):
        c = cand[i]
        if c == p or c == prev:
            continue
        prev = c
        ok = True
        for j in range(n_out):
            if out[j] == c:
                ok = False
                break
            if alpha * sqdist(data[out[j]], data[c]) < cand_d[i]:
                ok = False
                break
        if ok:
            out[n_out] = c
            n_out += 1
            if n_out == R:
                break
    return out[:n_out].copy()


@njit
def add_reverse_edge(data, adj, deg, src, dst, R, alpha):
    """Add edge src->dst, re-pruning src's whole list on overflow."""
    for j in range(deg[src]):
        if adj[src, j] == dst:
            return
    if deg[src] < R:
        adj[src, deg[src]] = dst
        deg[src] += 1
        return
    m = deg[src] + 1
    ids = np.empty(m, np.int64)
    for j in range(m - 1):
        ids[j] = adj[src, j]
    ids[m - 1] = dst
    ds = sqdist_batch(data, ids, data[src])
    ids, ds = sort_pairs(ids, ds)
    kept = robust_prune(data, src, ids, ds, R, alpha)
    for j in range(kept.shape[0]):
        adj[src, j] = kept[j]
    deg[src] = kept.shape[0]


@njit
def insert_point(data, adj, deg, entry, node, L, R, alpha, visited, tag):
    ids, ds, log, log_d, n_evals = greedy_search(data, adj, deg, entry, data[node], L, visited, tag)
    cand = np.concatenate((ids, log))
    cand_d = np.concatenate((ds, log_d))
    cand, cand_d = sort_pairs(cand, cand_d)
    kept = robust_prune(data, node, cand, cand_d, R, alpha)
    for j in range(kept.shape[0]):
        adj[node, j] = kept[j]
    deg[node] = kept.shape[0]
    for j in range(kept.shape[0]):
        add_reverse_edge(data, adj, deg, kept[j], node, R, alpha)
    return n_evals


@njit
def build_incremental(data, adj, deg, order, entry, L, R, alpha, visited):
    visited[:] = 0
    tag = 0
    for t in range(order.shape[0]):
        node = order[t]
        if node == entry:
            continue
        tag += 1
        insert_point(data, adj, deg, entry, node, L, R, alpha, visited, tag)


@njit
def merge_partition(data, adj, deg, lo, hi, part_entry, centroids, me,
                    eta, k_merge, L, R, alpha, new_adj, new_deg, visited, record):
    """Cross-partition neighbor gathering and pruning for rows [lo, hi).

    Returns the pre-prune candidate lists (CSR) when ``record`` is set.
    """
    c = centroids.shape[0]
    n_rows = hi - lo
    rec_off = np.zeros(n_rows + 1, np.int64)
    rec_ids = np.empty(0 if not record else n_rows * (R + k_merge * (c - 1)), np.int64)
    n_rec = 0
    visited[:] = 0
    tag = 0
    for x in range(lo, hi):
        cap = deg[x] + k_merge * (c - 1)
        cand = np.empty(cap, np.int64)
        cand_d = np.empty(cap, np.float64)
        m = 0
        for j in range(deg[x]):
            cand[m] = adj[x, j]
            cand_d[m] = sqdist(data[adj[x, j]], data[x])
            m += 1
        own = sqdist(data[x], centroids[me])
        for pj in range(c):
            if pj == me:
                continue
            if not (np.isinf(eta) or sqdist(data[x], centroids[pj]) <= eta * own):
                continue
            tag += 1
            ids, ds, log, log_d, _ = greedy_search(data, adj, deg, part_entry[pj], data[x], L, visited, tag)
            take = min(k_merge, ids.shape[0])
            for t in range(take):
                cand[m] = ids[t]
                cand_d[m] = ds[t]
                m += 1
        cs, cds = sort_pairs(cand[:m], cand_d[:m])
        if record:
            prev = -1
            for t in range(m):
                if cs[t] != prev:
                    rec_ids[n_rec] = cs[t]
                    n_rec += 1
                    prev = cs[t]
            rec_off[x - lo + 1] = n_rec
        kept = robust_prune(data, x, cs, cds, R, alpha)
        for j in range(kept.shape[0]):
            new_adj[x, j] = kept[j]
        new_deg[x] = kept.shape[0]
    return rec_off, rec_ids[:n_rec].copy()


@njit
def add_reverse_edges(data, adj, deg, src_adj, src_deg, R, alpha):
    """For every edge x->y of the source lists, add y->x (re-pruning on overflow)."""
    for x in range(src_deg.shape[0]):
        for j in range(src_deg[x]):
            add_reverse_edge(data, adj, deg, src_adj[x, j], x, R, alpha)
