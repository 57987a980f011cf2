"""Staged late-interaction retrieval over a :class:`CompressedIndex`.

The cascade:

1. candidate generation -- each query token probes its ``nprobe`` closest
   centroids; candidates are the union of those centroids' ivf lists;
2. centroid pruning -- probed centroids whose best similarity to any query
   token is below ``t_cs`` are dropped;
3. centroid interaction -- candidates are scored by MaxSim against their
   surviving centroids only and the best ``ndocs`` are kept;
4. exact rescoring -- the best ``max(ceil(ndocs/4), k)`` of those (capped at
   ``ndocs``) are decompressed and scored exactly.

Every truncation breaks ties by ascending doc id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .embedding import CompressedIndex, UNIT_TOL
from .errors import ConfigError, InputError


@dataclass
class QueryEmbeddings:
    query_id: str
    vectors: np.ndarray
    text: str | None = None

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise InputError(f"query {self.query_id!r} needs at least one token vector")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
            raise InputError(f"query {self.query_id!r} vectors are not unit-norm")


@dataclass(frozen=True)
class SearchParams:
    nprobe: int = 2
    t_cs: float = 0.45
    ndocs: int = 1024
    k: int = 1000

    def __post_init__(self):
        if self.nprobe < 1:
            raise ConfigError("nprobe must be >= 1")
        if self.ndocs < 4:
            raise ConfigError("ndocs must be >= 4")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    @property
    def rescore_count(self) -> int:
        return min(max(math.ceil(self.ndocs / 4), self.k), self.ndocs)


# Suggested operational points (a), (b), (c); k follows the usual depth of 1000.
PRESETS = {
    "a": SearchParams(nprobe=1, t_cs=0.50, ndocs=256),
    "b": SearchParams(nprobe=2, t_cs=0.45, ndocs=1024),
    "c": SearchParams(nprobe=4, t_cs=0.40, ndocs=4096),
}


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def ranked_from_ordinals(query_id, ordinals, scores, index: CompressedIndex, k: int) -> RankedList:
    pick = _kernels.top_k(ordinals, scores, k, index.tie_rank)
    ords = np.asarray(ordinals)[pick]
    sc = np.asarray(scores)[pick]
    return RankedList(query_id, [(index.doc_ids[o], float(s)) for o, s in zip(ords, sc)])


def _check_dim(q: QueryEmbeddings, index: CompressedIndex):
    if q.vectors.shape[1] != index.dim:
        raise InputError(f"query dim {q.vectors.shape[1]} != index dim {index.dim}")


def exact_scores(q: QueryEmbeddings, ordinals, index: CompressedIndex) -> np.ndarray:
    """MaxSim of the query against the decompressed tokens of each doc."""
    return _kernels.maxsim(q.vectors, np.asarray(ordinals, dtype=np.int64), index.doc_offsets,
                           index.centroid_ids, index.codes, index.codebook.centroids,
                           index.codec.representatives)


def exact_score(q: QueryEmbeddings, ordinal: int, index: CompressedIndex) -> float:
    return float(exact_scores(q, [ordinal], index)[0])


def centroid_scores(q: QueryEmbeddings, index: CompressedIndex) -> np.ndarray:
    """Query-token x centroid similarity matrix, shape ``(q, nclusters)``."""
    _check_dim(q, index)
    return q.vectors @ index.codebook.centroids.T


def _probe(S: np.ndarray, nprobe: int) -> np.ndarray:
    if nprobe >= S.shape[1]:
        return np.arange(S.shape[1])
    # stable sort on -score: equal scores keep ascending centroid id
    top = np.argsort(-S, axis=1, kind="stable")[:, :nprobe]
    return np.unique(top)


def generate_candidates(q: QueryEmbeddings, index: CompressedIndex, nprobe: int,
                        S: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(candidate doc ordinals, matched centroid ids)``, both sorted."""
    if nprobe < 1:
        raise ConfigError("nprobe must be >= 1")
    if S is None:
        S = centroid_scores(q, index)
    cents = _probe(S, nprobe)
    lists = [index.ivf_docs[index.ivf_offsets[c]:index.ivf_offsets[c + 1]] for c in cents]
    docs = np.unique(np.concatenate(lists)) if lists else np.zeros(0, np.int64)
    return docs.astype(np.int64), cents


def prune_centroids(q: QueryEmbeddings, centroids, t_cs: float, index: CompressedIndex,
                    S: np.ndarray | None = None) -> np.ndarray:
    """Keep centroid ``c`` iff ``max_i q_i . centroid_c >= t_cs``."""
    centroids = np.asarray(centroids, dtype=np.int64)
    if S is None:
        S = centroid_scores(q, index)
    if centroids.size == 0:
        return centroids
    best = S[:, centroids].max(axis=0)
    return centroids[best >= np.float32(t_cs)]


def _mask(centroids, n):
    m = np.zeros(n, dtype=np.bool_)
    m[np.asarray(centroids, dtype=np.int64)] = True
    return m


def approx_scores(q: QueryEmbeddings, ordinals, surviving, index: CompressedIndex,
                  S: np.ndarray | None = None) -> np.ndarray:
    if S is None:
        S = centroid_scores(q, index)
    return _kernels.approx(np.ascontiguousarray(S), _mask(surviving, index.nclusters),
                           np.asarray(ordinals, dtype=np.int64),
                           index.doc_cent_offsets, index.doc_cents)


def approx_score(q: QueryEmbeddings, ordinal: int, surviving, index: CompressedIndex) -> float:
    return float(approx_scores(q, [ordinal], surviving, index)[0])


@dataclass
class SearchTrace:
    """Intermediate sets of one cascade run, for inspection and tests."""

    candidates: np.ndarray
    probed: np.ndarray
    surviving: np.ndarray
    kept: np.ndarray
    rescored: np.ndarray


def plaid_search(q: QueryEmbeddings, index: CompressedIndex, params: SearchParams,
                 trace: bool = False):
    """Run the four-phase cascade; returns a :class:`RankedList` (and a trace if asked).

    The list may be shorter than ``k`` when fewer documents survive to
    exact rescoring.
    """
    S = centroid_scores(q, index)
    cands, probed = generate_candidates(q, index, params.nprobe, S)
    surviving = prune_centroids(q, probed, params.t_cs, index, S)
    approx = _kernels.approx(S, _mask(surviving, index.nclusters), cands,
                             index.doc_cent_offsets, index.doc_cents)
    keep = _kernels.top_k(cands, approx, params.ndocs, index.tie_rank)
    kept = cands[keep]
    rescored = kept[:params.rescore_count]
    exact = exact_scores(q, rescored, index)
    ranked = ranked_from_ordinals(q.query_id, rescored, exact, index, params.k)
    if trace:
        return ranked, SearchTrace(cands, probed, surviving, kept, rescored)
    return ranked


def exhaustive_search(q: QueryEmbeddings, index: CompressedIndex, k: int) -> RankedList:
    _check_dim(q, index)
    ords = np.arange(index.n_docs, dtype=np.int64)
    return ranked_from_ordinals(q.query_id, ords, exact_scores(q, ords, index), index, k)
