"""Command line entry point: ``pagann <command> [options]``.

Settings resolve in three layers: built-in defaults, an INI file given with
``--config``, then command-line flags (``--set section.key=value`` reaches any
setting). ``show-config`` prints the resolved result. Every command writes
under ``--out`` and records what it produced in ``manifest.json`` there.

Exit codes: 0 success, 1 invariant violation, 2 bad usage or argument,
3 unreadable or malformed input.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .cic import CicConfig
from .core import Dataset
from .dataset_io import (
    compute_ground_truth, gen_synthetic, load_bvecs, load_fvecs, load_ground_truth, save_ground_truth,
    write_fvecs, write_ivecs,
)
from .errors import FormatError, InvalidArgumentError, InvariantError, PagannError
from .index_io import load_index, open_partition_store, save_index
from .metrics import QueryRecord, aggregate, recall_at_k, write_csv, write_jsonl
from .pag import PagConfig, build_naive_pag, build_pag_drs, validate_index
from .search import SearchParams, search
from .store import MemoryStore, SimulatedStore, StoreProfile

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "workers": "1", "out": "out"},
    "data": {"base": "", "queries": "", "gt": "", "index": "", "k": "10"},
    "gen": {
        "n": "10000", "dim": "32", "queries": "200", "distribution": "uniform",
        "m": "10", "sigma": "0.05", "heavy": "0",
    },
    "pag": {
        "mode": "drs", "p": "0.2", "lam": "1.5", "gamma1": "0.75", "gamma2": "0.9", "k_assign": "8",
        "search_L": "64", "redundancy": "nearest_neighbor", "max_copies": "4",
    },
    "cic": {"c": "1", "eta": "2.0", "k_merge": "8", "R": "16", "alpha": "1.0", "L_build": "64"},
    "search": {"k": "10", "L": "64", "rho": "1.0", "max_probes": "auto", "mode": "async"},
    "store": {"backend": "file", "base_latency": "0.001", "jitter": "0.001", "throughput_cap": "32"},
}

# flag -> (section, key, type)
_FLAGS = {
    "seed": ("run", "seed", int), "workers": ("run", "workers", int), "out": ("run", "out", str),
    "base": ("data", "base", str), "queries": ("data", "queries", str), "gt": ("data", "gt", str),
    "index": ("data", "index", str), "k": ("search", "k", int),
}


class Settings:
    def __init__(self, cp: configparser.ConfigParser) -> None:
        self.cp = cp

    def get(self, section: str, key: str) -> str:
        return self.cp.get(section, key)

    def int(self, section: str, key: str) -> int:
        return self.cp.getint(section, key)

    def float(self, section: str, key: str) -> float:
        return self.cp.getfloat(section, key)

    def path(self, section: str, key: str, must_exist: bool = True) -> Path:
        v = self.get(section, key)
        if not v:
            raise InvalidArgumentError(f"missing setting {section}.{key}")
        p = Path(v)
        if must_exist and not p.exists():
            raise FileNotFoundError(f"{section}.{key}: no such file {p}")
        return p

    def dump(self) -> str:
        buf = io.StringIO()
        self.cp.write(buf)
        return buf.getvalue()

    def pag_config(self) -> PagConfig:
        s = "pag"
        cic = CicConfig(
            c=self.int("cic", "c"), eta=self.float("cic", "eta"), k_merge=self.int("cic", "k_merge"),
            R=self.int("cic", "R"), alpha=self.float("cic", "alpha"), L_build=self.int("cic", "L_build"),
        )
        return PagConfig(
            p=self.float(s, "p"), lam=self.float(s, "lam"), gamma1=self.float(s, "gamma1"),
            gamma2=self.float(s, "gamma2"), k_assign=self.int(s, "k_assign"), search_L=self.int(s, "search_L"),
            redundancy=self.get(s, "redundancy"), max_copies=self.int(s, "max_copies"), cic=cic,
        )

    def search_params(self) -> SearchParams:
        mp = self.get("search", "max_probes")
        return SearchParams(
            k=self.int("search", "k"), L=self.int("search", "L"), rho=self.float("search", "rho"),
            max_probes=None if mp in ("", "auto") else int(mp), mode=self.get("search", "mode"),
        )

    def store_profile(self) -> StoreProfile:
        return StoreProfile(
            self.float("store", "base_latency"), self.float("store", "jitter"), self.int("store", "throughput_cap"),
        )


def resolve_settings(args) -> Settings:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        cp.read(path)
    for flag, (section, key, _) in _FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cp.set(section, key, str(v))
    for item in getattr(args, "set", None) or []:
        name, sep, value = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot or not cp.has_section(section) or not cp.has_option(section, key):
            raise InvalidArgumentError(f"--set expects a known section.key=value, got {item!r}")
        cp.set(section, key, value)
    return Settings(cp)


def load_vectors(path: Path) -> Dataset:
    return load_bvecs(path) if path.suffix == ".bvecs" else load_fvecs(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, files: list[Path], command: str, settings: Settings) -> None:
    entries = []
    for f in sorted(set(files)):
        entries.append({"path": str(f.relative_to(out)) if f.is_relative_to(out) else str(f),
                        "bytes": f.stat().st_size, "sha256": _sha256(f)})
    (out / "config.ini").write_text(settings.dump())
    entries.append({"path": "config.ini", "bytes": (out / "config.ini").stat().st_size,
                    "sha256": _sha256(out / "config.ini")})
    doc = {"command": command, "files": entries}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(st: Settings) -> Path:
    out = Path(st.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_gen(st: Settings) -> int:
    out = _out_dir(st)
    n, nq = st.int("gen", "n"), st.int("gen", "queries")
    m = st.int("gen", "m")
    heavy = st.float("gen", "heavy")
    weights = None
    if heavy > 0:
        if not heavy < 1 or m < 2:
            raise InvalidArgumentError("gen.heavy must be in (0, 1) with m >= 2")
        weights = [heavy] + [(1 - heavy) / (m - 1)] * (m - 1)
    syn = gen_synthetic(n + nq, st.int("gen", "dim"), st.get("gen", "distribution"), st.int("run", "seed"),
                        m=m, sigma=st.float("gen", "sigma"), weights=weights)
    v = syn.dataset.vectors
    write_fvecs(out / "base.fvecs", v[:n])
    files = [out / "base.fvecs"]
    if nq:
        write_fvecs(out / "queries.fvecs", v[n:])
        files.append(out / "queries.fvecs")
    write_manifest(out, files, "gen", st)
    print(f"wrote {n} base and {nq} query vectors to {out}")
    return EXIT_OK


def cmd_gt(st: Settings) -> int:
    base = load_vectors(st.path("data", "base"))
    queries = load_vectors(st.path("data", "queries"))
    k = st.int("search", "k")
    out = _out_dir(st)
    gt = compute_ground_truth(base, queries, k, workers=st.int("run", "workers"))
    save_ground_truth(gt, out / "gt.ivecs", out / "gt_dist.fvecs")
    write_manifest(out, [out / "gt.ivecs", out / "gt_dist.fvecs"], "gt", st)
    print(f"ground truth for {len(queries)} queries, k={k}, in {out}")
    return EXIT_OK


def cmd_build(st: Settings) -> int:
    ds = load_vectors(st.path("data", "base"))
    cfg = st.pag_config()
    mode = st.get("pag", "mode")
    seed, workers = st.int("run", "seed"), st.int("run", "workers")
    out = _out_dir(st)
    t0 = time.perf_counter()
    if mode == "drs":
        index = build_pag_drs(ds, cfg, seed, workers)
    elif mode == "naive":
        index = build_naive_pag(ds, cfg, seed, workers)
    else:
        raise InvalidArgumentError(f"pag.mode must be drs or naive, got {mode!r}")
    build_seconds = time.perf_counter() - t0
    index_dir = out / "index"
    files = save_index(index, ds, index_dir, config=cfg)

    reloaded = load_index(index_dir)
    validate_index(reloaded, ds)
    store = open_partition_store(index_dir)
    for a in range(reloaded.n_aggregation):
        blob = store.get(reloaded.store_key(a))
        if not np.array_equal(blob.ids, reloaded.members(a)):
            raise InvariantError("partition-directory", f"stored partition {blob.key} disagrees with manifest")

    sizes = reloaded.primary_sizes()
    report = {
        "mode": mode, "seed": seed, "workers": workers, "build_seconds": build_seconds,
        "n_points": reloaded.n_points, "aggregation_points": reloaded.n_aggregation,
        "promoted": reloaded.promoted, "capacity": reloaded.capacity,
        "max_primary_partition": int(sizes.max()), "mean_primary_partition": float(sizes.mean()),
        "redundant_copies": int(reloaded.redundant_sizes().sum()),
        "timings": index.build_report.get("timings", {}),
    }
    (out / "build_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, files + [out / "build_report.json"], "build", st)
    print(json.dumps({k: report[k] for k in ("aggregation_points", "promoted", "max_primary_partition")}))
    return EXIT_OK


def _open_search_store(st: Settings, index_dir: Path):
    backend = st.get("store", "backend")
    files = open_partition_store(index_dir)
    if backend == "file":
        return files
    mem = MemoryStore()
    for key in files.keys():
        mem.put_bytes(key, files.get_bytes(key))
    if backend == "memory":
        return mem
    if backend == "simulated":
        return SimulatedStore(mem, st.store_profile(), seed=st.int("run", "seed"))
    raise InvalidArgumentError(f"store.backend must be file, memory or simulated, got {backend!r}")


def _load_for_search(st: Settings):
    index_dir = st.path("data", "index")
    index = load_index(index_dir)
    validate_index(index)
    queries = load_vectors(st.path("data", "queries"))
    if len(queries) == 0:
        raise InvalidArgumentError("no queries")
    if queries.dim != index.dim:
        raise InvalidArgumentError(f"query dimension {queries.dim} != index dimension {index.dim}")
    return index_dir, index, queries


def run_queries(index, store, queries: Dataset, params: SearchParams, gt=None):
    """Run every query in order; returns results, per-query records and wall time."""
    results, records = [], []
    t_all = time.perf_counter()
    for i in range(len(queries)):
        t0 = time.perf_counter()
        res, stats = search(index, store, queries.vectors[i], params)
        lat = time.perf_counter() - t0
        rec = recall_at_k([r for r, _ in res], gt.row(i), gt.k) if gt is not None else float("nan")
        results.append(res)
        records.append(QueryRecord(lat, rec, stats.partitions_probed))
    return results, records, time.perf_counter() - t_all


def _load_gt(st: Settings, n_queries: int, k: int, required: bool):
    v = st.get("data", "gt")
    if not v:
        if required:
            raise InvalidArgumentError("ground truth (--gt) is required")
        return None
    gt = load_ground_truth(st.path("data", "gt"), k=k)
    if len(gt) != n_queries:
        raise InvalidArgumentError(f"ground truth has {len(gt)} rows for {n_queries} queries")
    return gt


def cmd_search(st: Settings) -> int:
    index_dir, index, queries = _load_for_search(st)
    params = st.search_params()
    params.validate()
    gt = _load_gt(st, len(queries), params.k, required=False)
    out = _out_dir(st)
    store = _open_search_store(st, index_dir)
    try:
        results, records, wall = run_queries(index, store, queries, params, gt)
    finally:
        store.close()
    ids = np.full((len(results), params.k), -1, dtype=np.int64)
    dists = np.full((len(results), params.k), np.inf, dtype=np.float32)
    for i, res in enumerate(results):
        for j, (vid, d) in enumerate(res):
            ids[i, j], dists[i, j] = vid, d
    write_ivecs(out / "results.ivecs", ids.astype(np.int32))
    if np.isfinite(dists).all():
        write_fvecs(out / "results_dist.fvecs", dists)
    write_jsonl(out / "queries.jsonl", (
        {"query": i, "ids": [v for v, _ in res], "latency": r.latency, "partitions_probed": r.partitions_probed,
         **({"recall": r.recall} if gt is not None else {})}
        for i, (res, r) in enumerate(zip(results, records))
    ))
    files = [out / "results.ivecs", out / "queries.jsonl"]
    if (out / "results_dist.fvecs").exists():
        files.append(out / "results_dist.fvecs")
    if gt is not None:
        rep = aggregate(records, wall)
        write_jsonl(out / "report.jsonl", [rep.to_dict()])
        files.append(out / "report.jsonl")
        print(f"recall@{params.k}={rep.recall_at_k:.4f} qps={rep.qps:.1f} probes={rep.mean_partitions_probed:.2f}")
    else:
        print(f"searched {len(queries)} queries in {wall:.3f}s")
    write_manifest(out, files, "search", st)
    return EXIT_OK


def parse_sweep(items: list[str]) -> list[dict]:
    """``["L=32,64", "max_probes=8,16"]`` -> cartesian product of settings."""
    axes = []
    for item in items:
        name, sep, values = item.partition("=")
        if not sep or name not in ("L", "max_probes", "rho", "k"):
            raise InvalidArgumentError(f"--sweep expects L|max_probes|rho|k=v1,v2,..., got {item!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise InvalidArgumentError(f"--sweep {name} has no values")
        axes.append([(name, v) for v in vals])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else [{}]


def cmd_bench(st: Settings, sweep: list[str]) -> int:
    index_dir, index, queries = _load_for_search(st)
    points = parse_sweep(sweep)
    out = _out_dir(st)
    build_seconds = 0.0
    report_path = Path(index_dir).parent / "build_report.json"
    if report_path.exists():
        build_seconds = json.loads(report_path.read_text()).get("build_seconds", 0.0)
    rows = []
    store = _open_search_store(st, index_dir)
    try:
        for point in points:
            params = st.search_params()
            for name, v in point.items():
                if name == "max_probes":
                    params.max_probes = None if v == "auto" else int(v)
                elif name == "rho":
                    params.rho = float(v)
                else:
                    setattr(params, name, int(v))
            params.validate()
            gt = _load_gt(st, len(queries), params.k, required=True)
            _, records, wall = run_queries(index, store, queries, params, gt)
            rep = aggregate(records, wall, build_seconds)
            mp = params.resolved_max_probes(index)
            rows.append({
                "k": params.k, "L": params.L, "rho": params.rho,
                "max_probes": "inf" if math.isinf(mp) else int(mp), "mode": params.mode, **rep.to_dict(),
            })
            print(f"L={params.L} max_probes={rows[-1]['max_probes']} rho={params.rho} "
                  f"recall={rep.recall_at_k:.4f} qps={rep.qps:.1f}")
    finally:
        store.close()
    write_csv(out / "bench.csv", rows)
    write_jsonl(out / "bench.jsonl", rows)
    write_manifest(out, [out / "bench.csv", out / "bench.jsonl"], "bench", st)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pagann", description="Point aggregation graph index tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        sp.add_argument("--config", help="INI settings file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any setting")
        for f in flags:
            _, _, typ = _FLAGS[f]
            sp.add_argument(f"--{f.replace('_', '-')}", dest=f, type=typ, default=None)
        return sp

    common(sub.add_parser("gen", help="write a synthetic dataset"), "seed", "out")
    common(sub.add_parser("gt", help="brute-force ground truth"), "base", "queries", "k", "out", "workers", "seed")
    common(sub.add_parser("build", help="build, save and re-validate an index"), "base", "out", "seed", "workers")
    common(sub.add_parser("search", help="run queries against a saved index"),
           "index", "queries", "gt", "k", "out", "seed")
    b = common(sub.add_parser("bench", help="recall/QPS sweep"), "index", "queries", "gt", "k", "out", "seed")
    b.add_argument("--sweep", action="append", default=[], metavar="NAME=V1,V2",
                   help="sweep L, max_probes, rho or k; repeat for a grid")
    common(sub.add_parser("show-config", help="print the resolved settings"))
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        st = resolve_settings(args)
        if args.command == "show-config":
            sys.stdout.write(st.dump())
            return EXIT_OK
        if args.command == "bench":
            return cmd_bench(st, args.sweep)
        return {"gen": cmd_gen, "gt": cmd_gt, "build": cmd_build, "search": cmd_search}[args.command](st)
    except InvariantError as e:
        print(f"error: invariant {e.invariant} violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidArgumentError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT if isinstance(e, FormatError) else EXIT_USAGE
    except (PagannError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
