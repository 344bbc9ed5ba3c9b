"""Recall, throughput and latency summaries, plus report writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError


def recall_at_k(result: Iterable[int], truth: Sequence[int], k: int) -> float:
    """``|result & truth| / k`` with set semantics; ``truth`` must hold k ids."""
    truth = list(truth)
    if k < 1 or len(truth) != k:
        raise InvalidArgumentError(f"ground truth must hold exactly k={k} ids, got {len(truth)}")
    return len(set(int(x) for x in result) & set(int(x) for x in truth)) / k


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """The ``ceil(q * n)``-th smallest value (1-based); ``q`` in (0, 1]."""
    n = len(sorted_values)
    if n == 0:
        raise InvalidArgumentError("no values")
    if not 0.0 < q <= 1.0:
        raise InvalidArgumentError("percentile must lie in (0, 1]")
    return float(sorted_values[max(0, math.ceil(q * n) - 1)])


@dataclass
class QueryRecord:
    latency: float
    recall: float
    partitions_probed: int = 0


@dataclass
class EvalReport:
    recall_at_k: float
    qps: float
    latency_p50: float
    latency_p99: float
    latency_p999: float
    mean_partitions_probed: float
    build_seconds: float
    queries: int = 0
    latency_mean: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate(records: Sequence[QueryRecord], wall_time: float, build_seconds: float = 0.0) -> EvalReport:
    if not records:
        raise InvalidArgumentError("cannot aggregate an empty query log")
    if wall_time <= 0:
        raise InvalidArgumentError("wall time must be positive")
    lat = sorted(r.latency for r in records)
    return EvalReport(
        recall_at_k=float(np.mean([r.recall for r in records])),
        qps=len(records) / wall_time,
        latency_p50=nearest_rank(lat, 0.50),
        latency_p99=nearest_rank(lat, 0.99),
        latency_p999=nearest_rank(lat, 0.999),
        mean_partitions_probed=float(np.mean([r.partitions_probed for r in records])),
        build_seconds=float(build_seconds),
        queries=len(records),
        latency_mean=float(np.mean(lat)),
    )


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_csv(path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else [f.name for f in fields(EvalReport)]
    with open(Path(path), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


__all__ = ["recall_at_k", "nearest_rank", "QueryRecord", "EvalReport", "aggregate", "write_jsonl", "write_csv"]
