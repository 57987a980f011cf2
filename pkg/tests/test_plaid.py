import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import decompressed_tokens, dense_maxsim, dense_ranking, unit_rows
from lateint.embedding import IndexConfig, TokenMatrix, build_index
from lateint.errors import ConfigError, InputError
from lateint.metrics import rbo_ext
from lateint.plaid import (PRESETS, QueryEmbeddings, SearchParams, _probe, approx_score, approx_scores,
                           centroid_scores, exact_score, exact_scores, exhaustive_search, generate_candidates,
                           plaid_search, prune_centroids)
from lateint.synthetic import SyntheticEncoder, make_collection


def _query(rng, n, dim, qid="q"):
    return QueryEmbeddings(qid, unit_rows(rng, n, dim))


def _random_index(seed, n_docs=60, dim=8, nclusters=16, max_tokens=6):
    rng = np.random.default_rng(seed)
    docs = [TokenMatrix(f"d{i:03d}", unit_rows(rng, int(rng.integers(1, max_tokens + 1)), dim))
            for i in range(n_docs)]
    return build_index(docs, IndexConfig(dim=dim, nclusters=nclusters, seed=seed, auto_scale=False))


# -- params -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"nprobe": 0}, {"ndocs": 3}, {"k": 0}])
def test_search_params_validation(kw):
    with pytest.raises(ConfigError):
        SearchParams(**kw)


def test_presets():
    assert (PRESETS["a"].nprobe, PRESETS["a"].t_cs, PRESETS["a"].ndocs) == (1, 0.50, 256)
    assert (PRESETS["b"].nprobe, PRESETS["b"].t_cs, PRESETS["b"].ndocs) == (2, 0.45, 1024)
    assert (PRESETS["c"].nprobe, PRESETS["c"].t_cs, PRESETS["c"].ndocs) == (4, 0.40, 4096)
    assert all(p.k == 1000 for p in PRESETS.values())


@pytest.mark.parametrize("ndocs,k,expect", [(256, 1000, 256), (4096, 1000, 1024), (8192, 1000, 2048),
                                            (64, 10, 16), (10, 10, 10), (5, 1, 2)])
def test_rescore_count(ndocs, k, expect):
    assert SearchParams(ndocs=ndocs, k=k).rescore_count == expect


def test_query_validation():
    with pytest.raises(InputError):
        QueryEmbeddings("q", np.zeros((0, 4), np.float32))
    with pytest.raises(InputError):
        QueryEmbeddings("q", np.ones((1, 4), np.float32))


def test_dim_mismatch():
    idx = _random_index(0)
    with pytest.raises(InputError):
        exhaustive_search(_query(np.random.default_rng(0), 2, 4), idx, 5)


# -- exact scoring --------------------------------------------------------------

def test_exact_score_self_match_is_one():
    idx = _random_index(1, max_tokens=1)
    d = idx.decompress_doc(3)
    assert exact_score(QueryEmbeddings("q", d), 3, idx) == pytest.approx(1.0, abs=1e-6)


def test_exact_score_permutation_invariant():
    rng = np.random.default_rng(2)
    V = unit_rows(rng, 5, 8)
    docs = [TokenMatrix("a", V), TokenMatrix("b", V[::-1].copy())]
    idx = build_index(docs, IndexConfig(dim=8, nclusters=3, auto_scale=False))
    q = _query(rng, 3, 8)
    assert exact_score(q, 0, idx) == exact_score(q, 1, idx)


def test_exact_score_matches_dense_oracle():
    idx = _random_index(3, dim=8)
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = _query(rng, 3, 8)
        o = int(rng.integers(idx.n_docs))
        assert exact_score(q, o, idx) == pytest.approx(dense_maxsim(q.vectors, decompressed_tokens(idx, o)), abs=1e-5)


def test_exact_score_additive_over_query_tokens():
    idx = _random_index(4)
    rng = np.random.default_rng(4)
    q = _query(rng, 4, 8)
    ords = np.arange(idx.n_docs)
    total = exact_scores(q, ords, idx)
    parts = sum(exact_scores(QueryEmbeddings("p", q.vectors[i:i + 1]), ords, idx) for i in range(4))
    np.testing.assert_allclose(total, parts, atol=1e-9)


def test_exhaustive_matches_independent_scorer():
    idx = _random_index(5, n_docs=200, dim=16, nclusters=32)
    rng = np.random.default_rng(5)
    for _ in range(5):
        q = _query(rng, 4, 16)
        got = exhaustive_search(q, idx, 200)
        want = dense_ranking(q.vectors, idx, 200)
        np.testing.assert_allclose(got.scores, [s for _, s in want], atol=1e-5)
        # order may differ only inside float32 near-ties
        for (d1, s1), (d2, s2) in zip(got.entries, want):
            assert d1 == d2 or abs(s1 - s2) < 1e-5


def test_exhaustive_full_depth_and_single_doc():
    idx = _random_index(6, n_docs=30)
    q = _query(np.random.default_rng(6), 2, 8)
    r = exhaustive_search(q, idx, 1000)
    assert sorted(r.doc_ids) == sorted(idx.doc_ids)
    one = build_index([TokenMatrix("solo", unit_rows(np.random.default_rng(0), 2, 8))],
                      IndexConfig(dim=8, nclusters=1))
    assert exhaustive_search(q, one, 10).doc_ids == ["solo"]


def test_ranked_list_ties_ascending_doc_id():
    v = unit_rows(np.random.default_rng(0), 1, 4)
    docs = [TokenMatrix(name, v) for name in ("z", "b", "m", "a")]
    idx = build_index(docs, IndexConfig(dim=4, nclusters=1))
    q = QueryEmbeddings("q", v)
    assert exhaustive_search(q, idx, 4).doc_ids == ["a", "b", "m", "z"]
    assert plaid_search(q, idx, SearchParams(nprobe=1, t_cs=-1, ndocs=4, k=2)).doc_ids == ["a", "b"]


# -- candidate generation and pruning ---------------------------------------------

def test_full_probe_returns_all_docs():
    idx = _random_index(7)
    q = _query(np.random.default_rng(7), 3, 8)
    docs, cents = generate_candidates(q, idx, idx.nclusters)
    assert docs.tolist() == list(range(idx.n_docs))
    assert cents.tolist() == list(range(idx.nclusters))


def test_single_token_on_centroid_probes_its_list():
    idx = _random_index(8)
    for c in range(idx.nclusters):
        q = QueryEmbeddings("q", idx.codebook.centroids[c:c + 1])
        docs, cents = generate_candidates(q, idx, 1)
        assert cents.tolist() == [c]
        assert docs.tolist() == idx.ivf_list(c).tolist()


def test_probe_ties_go_to_lowest_centroid():
    S = np.array([[0.5, 0.9, 0.9, 0.1], [0.2, 0.2, 0.2, 0.2]], np.float32)
    assert _probe(S[:1], 1).tolist() == [1]
    assert _probe(S[:1], 2).tolist() == [1, 2]
    assert _probe(S[1:], 3).tolist() == [0, 1, 2]


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_candidate_monotone_in_nprobe(seed):
    idx = _random_index(seed % 7, n_docs=80, nclusters=24)
    q = _query(np.random.default_rng(seed), 3, 8)
    prev = set()
    for nprobe in (1, 2, 4, 8, 24):
        docs, _ = generate_candidates(q, idx, nprobe)
        assert prev <= set(docs.tolist())
        prev = set(docs.tolist())


def test_prune_identity_and_empty():
    idx = _random_index(9)
    q = _query(np.random.default_rng(9), 3, 8)
    allc = np.arange(idx.nclusters)
    assert prune_centroids(q, allc, -1.0, idx).tolist() == allc.tolist()
    assert prune_centroids(q, allc, 1.0 + 1e-6, idx).tolist() == []
    exact = QueryEmbeddings("q", idx.codebook.centroids[4:5])
    assert 4 in prune_centroids(exact, allc, 1.0 - 1e-6, idx).tolist()


def test_prune_matches_brute_force_1024():
    rng = np.random.default_rng(10)
    X = unit_rows(rng, 4096, 16)
    docs = [TokenMatrix(f"d{i}", X[i * 4:(i + 1) * 4]) for i in range(1024)]
    idx = build_index(docs, IndexConfig(dim=16, nclusters=1024, kmeans_iters=2, auto_scale=False))
    C = idx.codebook.centroids.astype(np.float64)
    for _ in range(10):
        q = _query(rng, 5, 16)
        got = prune_centroids(q, np.arange(1024), 0.45, idx)
        want = [c for c in range(1024) if max(float(np.float32(q.vectors[i] @ idx.codebook.centroids[c]))
                                              for i in range(5)) >= np.float32(0.45)]
        assert got.tolist() == want
        # float64 brute force differs only within float32 rounding of the threshold
        loose = set(np.flatnonzero((q.vectors.astype(np.float64) @ C.T).max(axis=0) >= 0.45 + 1e-6))
        assert loose <= set(got.tolist())


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_pruning_monotone_in_threshold(seed):
    idx = _random_index(seed % 5, nclusters=32)
    q = _query(np.random.default_rng(seed), 3, 8)
    probed = np.arange(idx.nclusters)
    prev = None
    for t in (0.3, 0.4, 0.45, 0.5, 0.6):
        cur = set(prune_centroids(q, probed, t, idx).tolist())
        if prev is not None:
            assert cur <= prev
        prev = cur


# -- approximate scoring --------------------------------------------------------------

def test_approx_zero_when_centroid_pruned():
    idx = _random_index(11)
    q = _query(np.random.default_rng(11), 2, 8)
    o = 0
    own = set(idx.centroid_ids[idx.token_slice(o)].tolist())
    others = [c for c in range(idx.nclusters) if c not in own]
    assert approx_score(q, o, others, idx) == 0.0


def test_approx_matches_dense_oracle():
    idx = _random_index(12, nclusters=20)
    rng = np.random.default_rng(12)
    for _ in range(30):
        q = _query(rng, 3, 8)
        surv = np.flatnonzero(rng.random(idx.nclusters) < 0.5)
        o = int(rng.integers(idx.n_docs))
        cents = sorted(set(idx.centroid_ids[idx.token_slice(o)].tolist()) & set(surv.tolist()))
        if cents:
            S = q.vectors.astype(np.float64) @ idx.codebook.centroids[cents].astype(np.float64).T
            want = float(S.max(axis=1).sum())
        else:
            want = 0.0
        assert approx_score(q, o, surv, idx) == pytest.approx(want, abs=1e-5)


def test_approx_equals_exact_without_residuals():
    rng = np.random.default_rng(13)
    P = unit_rows(rng, 6, 8)
    docs = [TokenMatrix(f"d{i}", P[rng.choice(6, size=3, replace=False)]) for i in range(20)]
    idx = build_index(docs, IndexConfig(dim=8, nclusters=6, auto_scale=False))
    q = _query(rng, 3, 8)
    ords = np.arange(idx.n_docs)
    np.testing.assert_allclose(approx_scores(q, ords, np.arange(6), idx), exact_scores(q, ords, idx), atol=1e-5)


# -- the cascade --------------------------------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_plaid_without_filtering_equals_exhaustive(seed):
    idx = _random_index(seed % 9, n_docs=70)
    q = _query(np.random.default_rng(seed), 3, 8)
    N = idx.n_docs
    p = plaid_search(q, idx, SearchParams(nprobe=idx.nclusters, t_cs=-1.0, ndocs=4 * N, k=N))
    e = exhaustive_search(q, idx, N)
    assert p.doc_ids == e.doc_ids
    np.testing.assert_allclose(p.scores, e.scores, atol=1e-5)
    assert rbo_ext(p.doc_ids, e.doc_ids, 0.99) == 1.0


def test_stage_safety_and_trace(index, queries):
    for q in queries[:10]:
        ranked, tr = plaid_search(q, index, SearchParams(nprobe=2, t_cs=0.4, ndocs=64, k=20), trace=True)
        cand = set(tr.candidates.tolist())
        assert {index.ordinal_of[d] for d in ranked.doc_ids} <= cand
        assert set(tr.surviving.tolist()) <= set(tr.probed.tolist())
        assert len(tr.kept) <= 64 and len(tr.rescored) <= max(16, 20)
        s = ranked.scores
        assert all(a >= b for a, b in zip(s, s[1:]))
        assert len(set(ranked.doc_ids)) == len(ranked.doc_ids)


def test_short_list_when_k_exceeds_rescored(index, queries):
    r = plaid_search(queries[0], index, SearchParams(nprobe=1, t_cs=0.9, ndocs=8, k=100))
    assert len(r) <= 8


def test_search_is_deterministic(index, queries):
    p = SearchParams(nprobe=2, t_cs=0.4, ndocs=64, k=30)
    for q in queries[:5]:
        assert plaid_search(q, index, p).entries == plaid_search(q, index, p).entries


def test_rbo_non_decreasing_in_ndocs():
    coll = make_collection(1000, 30, seed=21)
    enc = SyntheticEncoder(32, 21, context_noise=0.3)
    idx = build_index([enc.encode(d["text"], d["doc_id"]) for d in coll.docs], IndexConfig(dim=32, seed=21))
    qs = [enc.encode_query(q["query_id"], q["text"]) for q in coll.queries]
    ref = [exhaustive_search(q, idx, 100) for q in qs]
    prev = -1.0
    for ndocs in (64, 256, 1024):
        p = SearchParams(nprobe=2, t_cs=0.45, ndocs=ndocs, k=100)
        mean = float(np.mean([rbo_ext(plaid_search(q, idx, p).doc_ids, r.doc_ids, 0.99) for q, r in zip(qs, ref)]))
        assert mean >= prev - 1e-9
        prev = mean


def test_centroid_scores_shape(index, queries):
    assert centroid_scores(queries[0], index).shape == (len(queries[0].vectors), index.nclusters)
