"""Acceptance criteria 1-9. Run with ``pytest -s tests/test_acceptance.py``.

Every test prints one ``C<n> PASS|FAIL`` line with the measured numbers
before asserting, so a failing run still reports all of them.
"""

import hashlib
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from pagann.cic import CicConfig, cic_build
from pagann.core import Dataset
from pagann.dataset_io import (
    compute_ground_truth, gen_synthetic, load_bvecs, load_fvecs, load_ivecs, split_queries,
    write_bvecs, write_fvecs, write_ivecs,
)
from pagann.graph import build_graph, greedy_search
from pagann.index_io import load_index, open_partition_store, save_index, write_partitions
from pagann.metrics import recall_at_k
from pagann.pag import PagConfig, build_naive_pag, build_pag_drs, validate_index
from pagann.search import SearchParams, exhaustive_scan, search, search_sync
from pagann.store import MemoryStore, PartitionBlob, SimulatedStore, StoreProfile

TESTS = Path(__file__).parent
SEED = 0
K = 10


def report(n, ok, detail):
    print(f"\nC{n} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


def mean_recall(index, store, queries, gt, params, fn=search):
    rec, probes = [], []
    for i, q in enumerate(queries.vectors):
        res, st = fn(index, store, q, params)
        rec.append(recall_at_k([v for v, _ in res], gt.row(i), gt.k))
        probes.append(st.partitions_probed)
    return float(np.mean(rec)), float(np.mean(probes))


def with_store(index, ds):
    store = MemoryStore()
    write_partitions(index, ds, store)
    return store


@pytest.fixture(scope="module")
def bench10k():
    """The 10k benchmark: 10k uniform points in d=32 plus 200 held-out queries."""
    t0 = time.perf_counter()
    base, queries = split_queries(gen_synthetic(10_200, 32, "uniform", seed=SEED), 200)
    gt = compute_ground_truth(base, queries, K)
    index = build_pag_drs(base, PagConfig(p=0.2), seed=SEED)
    return base, queries, gt, index, with_store(index, base), time.perf_counter() - t0


def test_c1_oracle_recall(bench10k):
    base, queries, gt, index, store, setup = bench10k
    t0 = time.perf_counter()
    recall, probes = mean_recall(index, store, queries, gt, SearchParams(k=K, L=64, max_probes=32))
    runtime = setup + time.perf_counter() - t0
    report(1, recall >= 0.90 and runtime < 120,
           f"recall@10={recall:.4f} (target >= 0.90), mean probes={probes:.1f}, runtime={runtime:.1f}s")


def test_c2_exhaustive_probe_equivalence():
    base, queries = split_queries(gen_synthetic(5000, 16, "uniform", seed=SEED), 100)
    gt = compute_ground_truth(base, queries, K)
    index = build_pag_drs(base, PagConfig(redundancy="none"), seed=SEED)
    store = with_store(index, base)
    params = SearchParams(k=K, max_probes=index.n_aggregation, rho=math.inf)
    mismatches, r_search, r_oracle = 0, [], []
    for i, q in enumerate(queries.vectors):
        res, _ = search(index, store, q, params)
        ref = exhaustive_scan(index, store, q, K)
        mismatches += res != ref
        r_search.append(recall_at_k([v for v, _ in res], gt.row(i), K))
        r_oracle.append(recall_at_k([v for v, _ in ref], gt.row(i), K))
    a, b = float(np.mean(r_search)), float(np.mean(r_oracle))
    report(2, a == b and mismatches == 0,
           f"recall search={a:.4f} oracle={b:.4f}, differing result lists={mismatches}/{len(queries)}")


def test_c3_drs_long_tail():
    m = 10
    ds = gen_synthetic(50_000, 32, "gaussian-mixture", seed=SEED, m=m, sigma=0.05,
                       weights=[0.5] + [0.5 / (m - 1)] * (m - 1)).dataset
    cfg = PagConfig(p=0.05, lam=2.0, redundancy="none")
    drs = build_pag_drs(ds, cfg, seed=SEED)
    naive = build_naive_pag(ds, cfg, seed=SEED)
    validate_index(drs, ds)
    d_max, n_max = int(drs.primary_sizes().max()), int(naive.primary_sizes().max())
    report(3, cfg.capacity == 40 and d_max <= 40 and n_max > 200,
           f"capacity={cfg.capacity}, DRS max partition={d_max}, naive max partition={n_max}")


def test_c4_redundancy_benefit(bench10k):
    base, queries, gt, _, _, _ = bench10k
    recall = {}
    for mc in (1, 4, 8, 16):
        index = build_pag_drs(base, PagConfig(p=0.2, max_copies=mc), seed=SEED)
        recall[mc], _ = mean_recall(index, with_store(index, base), queries, gt, SearchParams(k=K, max_probes=8))
    gain, tail = recall[4] - recall[1], recall[16] - recall[8]
    detail = ", ".join(f"max_copies={mc}: {r:.4f}" for mc, r in recall.items())
    report(4, gain >= 0.02 and tail <= 0.01, f"{detail}; 4 vs 1 = {gain:+.4f}, 16 vs 8 = {tail:+.4f}")


def test_c5_async_overlap(bench10k):
    base, _, _, index, mem, _ = bench10k
    queries = gen_synthetic(500, 32, "uniform", seed=SEED + 5).dataset
    params = SearchParams(k=K, max_probes=16, rho=math.inf)
    sim = SimulatedStore(mem, StoreProfile(base_latency=0.001, jitter=0.0, throughput_cap=32), seed=SEED)
    lat = {"sync": [], "async": []}
    same = 0
    try:
        for q in queries.vectors:
            out = {}
            for mode, fn in (("sync", search_sync), ("async", search)):
                t0 = time.perf_counter()
                res, st = fn(index, sim, q, params)
                lat[mode].append(time.perf_counter() - t0)
                assert st.partitions_probed == 16
                out[mode] = {v for v, _ in res}
            same += out["sync"] == out["async"]
    finally:
        sim.close()
    s, a = np.mean(lat["sync"]) * 1e3, np.mean(lat["async"]) * 1e3
    report(5, a <= 0.7 * s and same == len(queries),
           f"mean latency sync={s:.2f}ms async={a:.2f}ms (ratio {a / s:.3f}), identical id sets {same}/{len(queries)}")


def test_c6_adaptive_probe_efficiency(bench10k):
    base, queries, gt, index, store, _ = bench10k
    fixed = {m: mean_recall(index, store, queries, gt, SearchParams(k=K, max_probes=m, rho=math.inf))
             for m in range(1, 65)}
    lines, ok = [], True
    for rho in (1.0, 2.0, 4.0, 8.0):
        params = SearchParams(k=K, rho=rho)
        fired = 0
        rec, probes = [], []
        for i, q in enumerate(queries.vectors):
            res, st = search(index, store, q, params)
            rec.append(recall_at_k([v for v, _ in res], gt.row(i), K))
            probes.append(st.partitions_probed)
            fired += st.stopped_early
        r, p = float(np.mean(rec)), float(np.mean(probes))
        matching = [fp for fr, fp in fixed.values() if fr >= r - 0.005]
        if not matching:
            # Adaptive recall above every fixed setting: nothing to match.
            lines.append(f"rho={rho:g}: recall={r:.4f} probes={p:.2f} (no fixed setting reaches it)")
            continue
        best = min(matching)
        ok &= p <= best
        lines.append(f"rho={rho:g}: recall={r:.4f} probes={p:.2f} best fixed={best:.2f} stop fired {fired}x")
    report(6, ok, "; ".join(lines))


def graph_recall(g, queries, gt, L):
    return float(np.mean([
        recall_at_k(greedy_search(g, q, L, K).ids.tolist(), gt.row(i), K) for i, q in enumerate(queries.vectors)
    ]))


def clustered(n):
    """Ten gaussian clusters in d=32, the locality the partitioned build relies on."""
    return gen_synthetic(n, 32, "gaussian-mixture", seed=SEED, m=10, sigma=0.05)


def test_c7a_cic_quality():
    base, queries = split_queries(clustered(20_200), 200)
    gt = compute_ground_truth(base, queries, K)
    mono = build_graph(base, seed=SEED)
    cic = cic_build(base, CicConfig(c=8), seed=SEED)
    rm, rc = graph_recall(mono, queries, gt, 64), graph_recall(cic, queries, gt, 64)
    report("7a", abs(rm - rc) <= 0.02, f"20k clustered points, L=64 recall@10 monolithic={rm:.4f} cic(c=8)={rc:.4f}")


@pytest.mark.slow
def test_c7b_cic_scaling():
    base = clustered(100_000).dataset
    workers = max(4, os.cpu_count() or 1)
    build_graph(Dataset(base.vectors[:2000]), seed=SEED)  # compile outside timing
    t0 = time.perf_counter()
    build_graph(base, seed=SEED)
    t_mono = time.perf_counter() - t0
    t0 = time.perf_counter()
    cic_build(base, CicConfig(c=8), seed=SEED, workers=workers)
    t_cic = time.perf_counter() - t0
    report("7b", t_cic < t_mono,
           f"100k clustered points: monolithic {t_mono:.1f}s, cic c=8 with {workers} workers {t_cic:.1f}s, "
           f"{os.cpu_count()} cpu(s) available")


def test_c8_invariant_suite():
    suites = sorted(str(p) for p in TESTS.glob("test_*.py") if p.name not in ("test_acceptance.py",))
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *suites],
                          capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(8, proc.returncode == 0, f"{len(suites)} suites, seeds 0/1/2: {tail}")


def sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def test_c9_format_bit_exactness(tmp_path):
    rng = np.random.default_rng(SEED)
    checks = {}
    f = rng.random((300, 17), dtype=np.float32)
    write_fvecs(tmp_path / "a.fvecs", f)
    write_fvecs(tmp_path / "b.fvecs", load_fvecs(tmp_path / "a.fvecs"))
    checks["fvecs"] = sha((tmp_path / "a.fvecs").read_bytes()) == sha((tmp_path / "b.fvecs").read_bytes())
    u = rng.integers(0, 256, (300, 9), dtype=np.uint8)
    write_bvecs(tmp_path / "a.bvecs", u)
    write_bvecs(tmp_path / "b.bvecs", load_bvecs(tmp_path / "a.bvecs").vectors.astype(np.uint8))
    checks["bvecs"] = sha((tmp_path / "a.bvecs").read_bytes()) == sha((tmp_path / "b.bvecs").read_bytes())
    i = rng.integers(0, 2**31 - 1, (300, 10), dtype=np.int32)
    write_ivecs(tmp_path / "a.ivecs", i)
    write_ivecs(tmp_path / "b.ivecs", load_ivecs(tmp_path / "a.ivecs"))
    checks["ivecs"] = sha((tmp_path / "a.ivecs").read_bytes()) == sha((tmp_path / "b.ivecs").read_bytes())

    ds = Dataset(rng.random((2000, 12), dtype=np.float32))
    index = build_pag_drs(ds, PagConfig(), seed=SEED)
    save_index(index, ds, tmp_path / "i1")
    save_index(load_index(tmp_path / "i1"), ds, tmp_path / "i2")
    for name in ("graph.bin", "manifest.bin", "aggregation.fvecs"):
        checks[name] = sha((tmp_path / "i1" / name).read_bytes()) == sha((tmp_path / "i2" / name).read_bytes())
    s1, s2 = open_partition_store(tmp_path / "i1"), open_partition_store(tmp_path / "i2")
    checks["partition blobs"] = s1.keys() == s2.keys() and all(
        sha(s1.get_bytes(k)) == sha(s2.get_bytes(k))
        and sha(PartitionBlob.from_bytes(k, s1.get_bytes(k)).to_bytes()) == sha(s1.get_bytes(k))
        for k in s1.keys()
    )
    bad = [name for name, ok in checks.items() if not ok]
    report(9, not bad, f"{len(checks) - len(bad)}/{len(checks)} formats byte-identical" + (f"; broken: {bad}" if bad else ""))
