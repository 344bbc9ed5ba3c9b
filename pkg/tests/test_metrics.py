import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pagann.errors import InvalidArgumentError
from pagann.metrics import QueryRecord, aggregate, nearest_rank, recall_at_k, write_csv, write_jsonl


def test_recall_examples():
    truth = list(range(10))
    assert recall_at_k(truth, truth, 10) == 1.0
    assert recall_at_k(range(10, 20), truth, 10) == 0.0
    assert recall_at_k([0, 1, 2, 3, 4, 50, 51, 52, 53, 54], truth, 10) == 0.5


def test_recall_needs_k_truth_ids():
    with pytest.raises(InvalidArgumentError):
        recall_at_k([1], [1, 2], 3)


@given(st.lists(st.integers(0, 30), min_size=5, max_size=5, unique=True),
       st.lists(st.integers(0, 30), max_size=8), st.randoms())
def test_recall_permutation_invariant(truth, result, rnd):
    r1 = recall_at_k(result, truth, 5)
    rnd.shuffle(truth)
    rnd.shuffle(result)
    assert recall_at_k(result, truth, 5) == r1
    assert 0.0 <= r1 <= 1.0


def test_qps_arithmetic():
    rep = aggregate([QueryRecord(0.001, 1.0)] * 100, wall_time=0.1)
    assert rep.qps == pytest.approx(1000.0)
    assert rep.queries == 100


def test_equal_latencies_collapse_percentiles():
    rep = aggregate([QueryRecord(0.004, 0.5, 3)] * 37, 1.0, build_seconds=2.5)
    assert rep.latency_p50 == rep.latency_p99 == rep.latency_p999 == 0.004
    assert rep.mean_partitions_probed == 3.0
    assert rep.build_seconds == 2.5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_percentiles_match_sort_index_oracle(seed):
    lat = np.random.default_rng(seed).random(1000)
    rep = aggregate([QueryRecord(float(x), 1.0) for x in lat], 1.0)
    s = np.sort(lat)
    assert rep.latency_p99 == s[989]
    assert rep.latency_p50 == s[499]
    assert rep.latency_p999 == s[998]
    assert rep.latency_p50 <= rep.latency_p99 <= rep.latency_p999


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200), st.floats(0.001, 1.0))
def test_nearest_rank_is_order_statistic(values, q):
    s = sorted(values)
    v = nearest_rank(s, q)
    assert v == s[math.ceil(q * len(s)) - 1]
    assert sum(x <= v for x in s) >= q * len(s)


def test_aggregate_rejects_bad_logs():
    with pytest.raises(InvalidArgumentError):
        aggregate([], 1.0)
    with pytest.raises(InvalidArgumentError):
        aggregate([QueryRecord(0.1, 1.0)], 0.0)


def test_aggregate_deterministic():
    recs = [QueryRecord(0.001 * i, i / 10, i) for i in range(1, 11)]
    assert aggregate(recs, 2.0).to_dict() == aggregate(list(recs), 2.0).to_dict()


def test_report_writers(tmp_path):
    rows = [aggregate([QueryRecord(0.01, 0.9)], 0.01).to_dict()]
    write_jsonl(tmp_path / "r.jsonl", rows)
    write_csv(tmp_path / "r.csv", rows)
    assert json.loads((tmp_path / "r.jsonl").read_text()) == rows[0]
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.startswith("recall_at_k,qps")
