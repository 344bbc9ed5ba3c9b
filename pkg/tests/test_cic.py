import math

import numpy as np
import pytest

from pagann.cic import CicConfig, cic_build, split_dataset
from pagann.core import Dataset, brute_force_knn
from pagann.dataset_io import gen_synthetic
from pagann.errors import InvalidArgumentError
from pagann.graph import build_graph, greedy_search

from conftest import random_dataset


def recall(g, ds, qs, L=64, k=10):
    hits = 0
    for q in qs.vectors:
        got = set(greedy_search(g, q, L, k).ids.tolist())
        hits += len(got & {i for i, _ in brute_force_knn(ds, q, k)})
    return hits / (k * len(qs))


def test_split_one_partition_is_mean():
    ds = random_dataset(100, 4)
    part = split_dataset(ds, 1)
    assert (part.membership == 0).all()
    assert np.allclose(part.centroids[0], ds.vectors.astype(np.float64).mean(0))


def test_split_singletons():
    ds = random_dataset(12, 3)
    part = split_dataset(ds, 12)
    assert sorted(part.membership.tolist()) == list(range(12))


def test_split_two_blobs_follows_labels():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 400)
    X = np.where(labels[:, None] == 0, 0.0, 10.0) + 0.1 * rng.standard_normal((400, 5))
    part = split_dataset(Dataset(X), 2, seed=1)
    m = part.membership
    assert np.array_equal(m, labels) or np.array_equal(m, 1 - labels)


def test_split_never_leaves_empty_partitions(seed):
    ds = Dataset(np.repeat(np.random.default_rng(seed).random((3, 2)), 20, axis=0))
    part = split_dataset(ds, 8, seed=seed)
    assert (part.sizes() > 0).all()
    assert part.sizes().sum() == 60


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        CicConfig(c=0).validate()
    with pytest.raises(InvalidArgumentError):
        CicConfig(eta=0.5).validate()
    with pytest.raises(InvalidArgumentError):
        CicConfig(c=10).validate(n=5)


def test_single_partition_matches_build_graph():
    ds = random_dataset(500, 6, seed=2)
    g = cic_build(ds, CicConfig(c=1, R=10, L_build=32), seed=2)
    h = build_graph(ds, R=10, L_build=32, seed=2)
    assert g.adjacency_dict() == h.adjacency_dict()


def test_merged_graph_invariants(seed):
    ds = gen_synthetic(1500, 8, "gaussian-mixture", seed=seed, m=6, sigma=0.08).dataset
    g = cic_build(ds, CicConfig(c=4, R=12, L_build=40), seed=seed, workers=2)
    g.check_invariants(0.99)
    assert sorted(g.node_ids.tolist()) == list(range(1500))


def test_merged_recall_close_to_monolithic():
    ds = random_dataset(2000, 16, seed=0)
    qs = random_dataset(100, 16, seed=1)
    mono = recall(build_graph(ds, R=16, L_build=64, seed=0), ds, qs)
    merged = recall(cic_build(ds, CicConfig(c=4, eta=2.0), seed=0, workers=4), ds, qs)
    assert abs(merged - mono) <= 0.02


def test_merged_recall_on_separated_clusters(seed):
    syn = gen_synthetic(4100, 16, "gaussian-mixture", seed=seed, m=8, sigma=0.03)
    ds, qs = Dataset(syn.dataset.vectors[:4000]), Dataset(syn.dataset.vectors[4000:])
    mono = recall(build_graph(ds, seed=seed), ds, qs)
    merged = recall(cic_build(ds, CicConfig(c=4, eta=2.0), seed=seed), ds, qs)
    assert abs(merged - mono) <= 0.02


def test_unbounded_eta_not_worse_than_tight():
    ds = random_dataset(2000, 16, seed=4)
    qs = random_dataset(100, 16, seed=5)
    tight = recall(cic_build(ds, CicConfig(c=4, eta=1.0), seed=4), ds, qs)
    wide = recall(cic_build(ds, CicConfig(c=4, eta=math.inf), seed=4), ds, qs)
    assert wide >= tight


def test_candidate_sets_grow_with_eta(seed):
    ds = random_dataset(600, 6, seed)
    sets = []
    for eta in (1.0, 1.5, 3.0, math.inf):
        _, tr = cic_build(ds, CicConfig(c=5, eta=eta, R=10, L_build=32), seed=seed, trace=True)
        sets.append(tr.candidates)
    for small, big in zip(sets, sets[1:]):
        for x, cands in small.items():
            assert cands <= big[x]


def test_worker_count_does_not_change_graph():
    ds = random_dataset(800, 6, seed=9)
    a = cic_build(ds, CicConfig(c=4, R=10, L_build=32), seed=9, workers=1)
    b = cic_build(ds, CicConfig(c=4, R=10, L_build=32), seed=9, workers=4)
    assert a.to_bytes() == b.to_bytes()
