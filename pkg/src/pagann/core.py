"""Vectors, datasets and exact squared-Euclidean distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

VectorId = int


@dataclass(frozen=True)
class Dataset:
    """Dense float32 vectors; the row ordinal is the ``VectorId``."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise InvalidArgumentError(f"dataset must be 2-D, got shape {v.shape}")
        if v.shape[1] < 1:
            raise InvalidArgumentError("dataset dimension must be >= 1")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("dataset contains NaN or Inf components")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, i):
        return self.vectors[i]

    def subset(self, ids) -> "Dataset":
        return Dataset(self.vectors[np.asarray(ids, dtype=np.int64)])


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise InvalidArgumentError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise InvalidArgumentError("vector contains NaN or Inf components")
    return v


def distance(a, b) -> float:
    """Squared Euclidean distance, accumulated in float64."""
    a = np.asarray(a, dtype=np.float32).reshape(-1)
    b = np.asarray(b, dtype=np.float32).reshape(-1)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.dot(diff, diff))


def distances_to(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``vectors`` to ``q`` (float64)."""
    diff = vectors.astype(np.float64) - np.asarray(q, dtype=np.float32).astype(np.float64)
    return np.einsum("ij,ij->i", diff, diff)


def rank_by_distance(ids: np.ndarray, dists: np.ndarray, k: int | None = None):
    """Sort by (distance, id) ascending and keep the first ``k``."""
    order = np.lexsort((ids, dists))
    if k is not None:
        order = order[:k]
    return ids[order], dists[order]


def brute_force_knn(ds: Dataset, q, k: int) -> list[tuple[int, float]]:
    """Exact k nearest neighbors; equal distances go to the smaller id."""
    if k < 1 or k > ds.count:
        raise InvalidArgumentError(f"k must be in [1, {ds.count}], got {k}")
    q = as_vector(q, ds.dim)
    d = distances_to(ds.vectors, q)
    if k < ds.count:
        # Keep every id tied with the k-th distance so the tie-break is exact.
        kth = np.partition(d, k - 1)[k - 1]
        cand = np.flatnonzero(d <= kth)
    else:
        cand = np.arange(ds.count)
    ids, dists = rank_by_distance(cand.astype(np.int64), d[cand], k)
    return [(int(i), float(x)) for i, x in zip(ids, dists)]
