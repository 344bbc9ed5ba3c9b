"""Benchmark vector files (.fvecs/.bvecs/.ivecs), synthetic data, ground truth.

Every record is a little-endian int32 dimension followed by that many
components: float32 (fvecs), uint8 (bvecs) or int32 (ivecs).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, brute_force_knn
from .errors import FormatError, InvalidArgumentError


@dataclass
class GroundTruth:
    k: int
    ids: np.ndarray
    dists: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 2 or self.ids.shape[1] != self.k:
            raise InvalidArgumentError(f"ground truth rows must have length k={self.k}")

    def __len__(self) -> int:
        return self.ids.shape[0]

    def row(self, i: int) -> list[int]:
        return self.ids[i].tolist()


def _read_records(path, comp_dtype: np.dtype) -> tuple[np.ndarray, int]:
    """Parse a *vecs file into an (n, d) array of ``comp_dtype``."""
    path = Path(path)
    buf = path.read_bytes()
    size = len(buf)
    width = np.dtype(comp_dtype).itemsize
    if size == 0:
        raise FormatError("empty vector file", offset=0, path=str(path))
    if size < 4:
        raise FormatError("truncated dimension header", offset=0, path=str(path))
    d = int(np.frombuffer(buf, dtype="<i4", count=1)[0])
    if d <= 0:
        raise FormatError(f"non-positive dimension {d}", offset=0, path=str(path))
    rec = 4 + d * width
    n, rem = divmod(size, rec)
    raw = np.frombuffer(buf, dtype=np.uint8, count=n * rec).reshape(n, rec)
    # Check every header before trusting the fixed-stride reshape.
    dims = np.ascontiguousarray(raw[:, :4]).view("<i4").reshape(n)
    bad = np.flatnonzero(dims != d)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i} has dimension {dims[i]}, expected {d}", offset=i * rec, path=str(path))
    if rem:
        off = n * rec
        if rem >= 4:
            di = int.from_bytes(buf[off: off + 4], "little", signed=True)
            if di != d:
                raise FormatError(f"record {n} has dimension {di}, expected {d}", offset=off, path=str(path))
        raise FormatError(f"truncated record {n}", offset=off, path=str(path))
    data = np.ascontiguousarray(raw[:, 4:]).view(np.dtype(comp_dtype).newbyteorder("<")).reshape(n, d)
    return data, d


def load_fvecs(path) -> Dataset:
    data, _ = _read_records(path, np.float32)
    if not np.isfinite(data).all():
        bad = int(np.flatnonzero(~np.isfinite(data).all(axis=1))[0])
        raise FormatError(f"record {bad} has non-finite components", offset=bad * (4 + 4 * data.shape[1]), path=str(path))
    return Dataset(data.astype(np.float32))


def load_bvecs(path) -> Dataset:
    data, _ = _read_records(path, np.uint8)
    return Dataset(data.astype(np.float32))


def load_ivecs(path) -> np.ndarray:
    data, _ = _read_records(path, np.int32)
    return data.astype(np.int32)


def _write_records(path, arr: np.ndarray, comp_dtype: str) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InvalidArgumentError("expected a non-empty 2-D array")
    n, d = arr.shape
    out = np.empty((n, 4 + d * np.dtype(comp_dtype).itemsize), dtype=np.uint8)
    out[:, :4] = np.frombuffer(np.int32(d).astype("<i4").tobytes(), dtype=np.uint8)
    out[:, 4:] = np.ascontiguousarray(arr.astype(comp_dtype)).view(np.uint8).reshape(n, d * np.dtype(comp_dtype).itemsize)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(out.tobytes())
    os.replace(tmp, path)


def write_fvecs(path, data) -> None:
    _write_records(path, data.vectors if isinstance(data, Dataset) else data, "<f4")


def write_bvecs(path, data) -> None:
    arr = data.vectors if isinstance(data, Dataset) else np.asarray(data)
    if (arr < 0).any() or (arr > 255).any() or (arr != np.round(arr)).any():
        raise InvalidArgumentError("bvecs components must be integers in [0, 255]")
    _write_records(path, arr, "u1")


def write_ivecs(path, rows) -> None:
    _write_records(path, np.asarray(rows), "<i4")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class Synthetic:
    """Generated dataset plus the generator's own cluster assignment log."""

    dataset: Dataset
    labels: np.ndarray | None = None
    centers: np.ndarray | None = None
    counts: np.ndarray | None = field(default=None)


def gen_synthetic(
    n: int,
    d: int,
    distribution: str = "uniform",
    seed: int = 0,
    m: int = 10,
    sigma: float = 0.05,
    weights=None,
) -> Synthetic:
    """Uniform [0, 1)^d points or an isotropic gaussian mixture.

    Mixture centers are uniform in [0, 1)^d; ``weights`` (default equal)
    sets each component's share of the points.
    """
    if n < 1 or d < 1:
        raise InvalidArgumentError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        return Synthetic(Dataset(rng.random((n, d), dtype=np.float32)))
    if distribution not in ("gaussian-mixture", "gaussian_mixture", "gmm"):
        raise InvalidArgumentError(f"unknown distribution {distribution!r}")
    if m < 1:
        raise InvalidArgumentError("mixture needs m >= 1 components")
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (m,) or (w < 0).any() or w.sum() <= 0:
        raise InvalidArgumentError("weights must be m non-negative numbers")
    w = w / w.sum()
    centers = rng.random((m, d))
    labels = rng.choice(m, size=n, p=w)
    pts = centers[labels] + sigma * rng.standard_normal((n, d))
    return Synthetic(Dataset(pts.astype(np.float32)), labels, centers, np.bincount(labels, minlength=m))


def split_queries(syn: Synthetic, n_queries: int) -> tuple[Dataset, Dataset]:
    """Hold out the last ``n_queries`` generated points as queries."""
    v = syn.dataset.vectors
    if not 0 < n_queries < len(v):
        raise InvalidArgumentError("n_queries must be in (0, n)")
    return Dataset(v[:-n_queries]), Dataset(v[-n_queries:])


# ---------------------------------------------------------------------------
# ground truth


def compute_ground_truth(ds: Dataset, queries: Dataset, k: int, workers: int = 1) -> GroundTruth:
    if queries.dim != ds.dim:
        raise InvalidArgumentError(f"query dimension {queries.dim} != dataset dimension {ds.dim}")
    if k < 1 or k > ds.count:
        raise InvalidArgumentError(f"k must be in [1, {ds.count}], got {k}")

    def row(i: int):
        r = brute_force_knn(ds, queries.vectors[i], k)
        return [j for j, _ in r], [x for _, x in r]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, range(len(queries))))
    else:
        rows = [row(i) for i in range(len(queries))]
    ids = np.array([r[0] for r in rows], dtype=np.int64).reshape(len(queries), k)
    dists = np.array([r[1] for r in rows], dtype=np.float64).reshape(len(queries), k)
    return GroundTruth(k, ids, dists)


def save_ground_truth(gt: GroundTruth, ivecs_path, fvecs_path=None) -> None:
    write_ivecs(ivecs_path, gt.ids.astype(np.int32))
    if fvecs_path is not None and gt.dists is not None:
        write_fvecs(fvecs_path, gt.dists.astype(np.float32))


def load_ground_truth(ivecs_path, fvecs_path=None, k: int | None = None) -> GroundTruth:
    ids = load_ivecs(ivecs_path).astype(np.int64)
    dists = None
    if fvecs_path is not None and Path(fvecs_path).exists():
        dists = load_fvecs(fvecs_path).vectors.astype(np.float64)
    if k is not None:
        if k > ids.shape[1]:
            raise InvalidArgumentError(f"ground truth has {ids.shape[1]} neighbors per row, need {k}")
        ids = ids[:, :k]
        dists = None if dists is None else dists[:, :k]
    return GroundTruth(ids.shape[1], ids, dists)


__all__ = [
    "GroundTruth", "Synthetic", "load_fvecs", "load_bvecs", "load_ivecs", "write_fvecs",
    "write_bvecs", "write_ivecs", "gen_synthetic", "split_queries", "compute_ground_truth",
    "save_ground_truth", "load_ground_truth",
]
