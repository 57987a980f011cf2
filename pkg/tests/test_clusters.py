from collections import Counter, defaultdict

import numpy as np
import pytest

import _oracles as oracle
from _oracles import unit_rows
from lateint.clusters import (cluster_report, cluster_stats, format_report, histogram, majority_cluster_proportion,
                              majority_token_proportion)
from lateint.embedding import IndexConfig, TokenMatrix, build_index
from lateint.errors import ConfigError
from lateint.synthetic import SyntheticEncoder


def _one_cluster_index(token_ids, dim=8, seed=0):
    vecs = unit_rows(np.random.default_rng(seed), len(token_ids), dim)
    return build_index([TokenMatrix("d", vecs, np.array(token_ids))],
                       IndexConfig(dim=dim, nclusters=1, seed=0, auto_scale=False))


def test_three_to_one_cluster():
    stats = cluster_stats(_one_cluster_index([0, 0, 0, 1]))
    assert stats.cluster_sizes.tolist() == [4]
    assert stats.token_majority.tolist() == [0.75]


def test_token_split_six_four():
    rng = np.random.default_rng(1)
    a, b = np.eye(8, dtype=np.float32)[0], np.eye(8, dtype=np.float32)[1]
    vecs = np.stack([a] * 6 + [b] * 4)
    idx = build_index([TokenMatrix("d", vecs, np.zeros(10, np.uint32))],
                      IndexConfig(dim=8, nclusters=2, seed=int(rng.integers(100)), auto_scale=False))
    stats = majority_cluster_proportion(idx)
    assert stats.token_ids.tolist() == [0]
    assert stats.cluster_majority.tolist() == [0.6]


def test_token_always_in_one_cluster():
    stats = cluster_stats(_one_cluster_index([5, 5, 5]))
    assert stats.cluster_majority.tolist() == [1.0]


def test_recount_oracle_on_mixed_corpus(index):
    stats = cluster_stats(index)
    per_cluster, per_token = oracle.majority_recount(zip(index.token_ids.tolist(), index.centroid_ids.tolist()))
    assert dict(zip(stats.cluster_ids.tolist(), stats.token_majority.tolist())) == pytest.approx(per_cluster)
    assert dict(zip(stats.token_ids.tolist(), stats.cluster_majority.tolist())) == pytest.approx(per_token)
    assert stats.cluster_sizes.sum() == index.n_tokens == stats.token_freqs.sum()
    assert np.all((stats.token_majority > 0) & (stats.token_majority <= 1))
    assert np.all((stats.cluster_majority > 0) & (stats.cluster_majority <= 1))


def test_weighted_mean_identity(index):
    stats = cluster_stats(index)
    weighted = float(np.sum(stats.token_majority * stats.cluster_sizes) / stats.cluster_sizes.sum())
    by_cluster = defaultdict(Counter)
    for c, t in zip(index.centroid_ids.tolist(), index.token_ids.tolist()):
        by_cluster[c][t] += 1
    mass = sum(max(cnt.values()) for cnt in by_cluster.values())
    assert weighted == pytest.approx(mass / index.n_tokens, abs=1e-12)


def test_histogram_mass_and_bins(index, tmp_path):
    stats = majority_token_proportion(index, tmp_path / "h.csv")
    edges, counts = stats.histogram("cluster")
    assert counts.sum() == len(stats.cluster_ids) and len(edges) == 21
    _, tcounts = stats.histogram("token")
    assert tcounts.sum() == len(stats.token_ids)
    _, c = histogram([0.75, 1.0, 0.0, 0.6])
    assert c[15] == 1 and c[19] == 1 and c[0] == 1 and c[12] == 1
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "majority_token_proportion_lo,majority_token_proportion_hi,count,bin_width"
    assert len(rows) == 21 and sum(int(r.split(",")[2]) for r in rows[1:]) == len(stats.cluster_ids)


def test_unique_embedding_per_token_is_pure():
    rng = np.random.default_rng(4)
    base = unit_rows(rng, 12, 16)
    docs = []
    for d in range(10):
        ids = rng.integers(0, 12, 8)
        docs.append(TokenMatrix(f"d{d}", base[ids], ids.astype(np.uint32)))
    idx = build_index(docs, IndexConfig(dim=16, nclusters=16, seed=0, auto_scale=False))
    stats = cluster_stats(idx)
    assert np.all(stats.token_majority == 1.0)
    assert np.all(stats.cluster_majority == 1.0)


def test_missing_token_ids_is_actionable():
    idx = build_index([TokenMatrix("d", unit_rows(np.random.default_rng(0), 4, 8))],
                      IndexConfig(dim=8, nclusters=1, auto_scale=False))
    with pytest.raises(ConfigError, match="token ids"):
        cluster_stats(idx)
    with pytest.raises(ConfigError):
        cluster_report(idx, "x", SyntheticEncoder(8, 0))


def test_single_token_corpus_report():
    enc = SyntheticEncoder(8, 0)
    idx = build_index([enc.encode("fish fish fish", "d")], IndexConfig(dim=8, nclusters=1, auto_scale=False))
    rep = cluster_report(idx, "fish", enc, nprobe=1)
    assert rep == [{"cluster": 0, "size": 3, "query_tokens": ["fish"], "top_tokens": [("fish", 100.0)]}]


def test_report_percentages(index, collection):
    enc = SyntheticEncoder(32, 11, context_noise=0.3)
    for d in collection.docs:
        enc.encode(d["text"])
    for q in collection.queries[:5]:
        rep = cluster_report(index, q["text"], enc, nprobe=2)
        assert rep
        for e in rep:
            members = index.token_ids[index.centroid_ids == e["cluster"]]
            total = sum(p for _, p in e["top_tokens"])
            assert total <= 100.0 + 1e-9
            if len(np.unique(members)) <= 10:
                assert total == pytest.approx(100.0)
            assert len(e["top_tokens"]) <= 10 and e["size"] == len(members)


def test_report_for_out_of_vocabulary_query_is_deterministic(index):
    a = cluster_report(index, "zzqx unseenword", SyntheticEncoder(32, 11), nprobe=2)
    b = cluster_report(index, "zzqx unseenword", SyntheticEncoder(32, 11), nprobe=2)
    assert a == b and a
    assert "cluster" in format_report("zzqx unseenword", a)
