"""Lexical first stage followed by exact late-interaction scoring.

``rerank`` scores a fixed BM25 pool. ``ladr_search`` (the adaptive variant
of lexically accelerated dense retrieval) keeps pulling in graph neighbours
of the current top-``c`` documents until no unscored neighbour remains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embedding import CompressedIndex
from .errors import ConfigError, IndexMismatchError, InputError
from .lexical import LexicalIndex, ProximityGraph, bm25_topn_wand
from .plaid import QueryEmbeddings, RankedList, exact_scores, ranked_from_ordinals
from . import _kernels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RerankParams:
    n: int = 1000
    k: int = 1000

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must be >= 1")


@dataclass(frozen=True)
class LadrParams:
    n0: int = 100
    k_neighbors: int = 64
    c: int = 10
    k: int = 1000
    max_iters: int = 50

    def __post_init__(self):
        if min(self.n0, self.k_neighbors, self.c, self.k, self.max_iters) < 1:
            raise ConfigError("all LADR parameters must be positive")


def _query_terms(q: QueryEmbeddings, lexical: LexicalIndex) -> list[str]:
    if q.text is None:
        raise InputError(f"query {q.query_id!r} carries no text for the lexical stage")
    return lexical.query_terms(q.text)


def lexical_pool(q: QueryEmbeddings, n: int, lexical: LexicalIndex) -> np.ndarray:
    """Top-``n`` lexical ordinals.

    When fewer than ``n`` docs match any query term, the remainder is filled
    with non-matching docs in ordinal order (they all tie at score 0), so a
    pool with ``n >= N`` always covers the whole corpus.
    """
    ords, _ = bm25_topn_wand(_query_terms(q, lexical), n, lexical)
    want = min(n, lexical.doc_count)
    if len(ords) < want:
        rest = np.setdiff1d(np.arange(lexical.doc_count), ords, assume_unique=True)
        ords = np.concatenate([ords, rest[:want - len(ords)]])
    return ords


def _to_embedding_ordinals(lex_ords, lexical: LexicalIndex, index: CompressedIndex) -> np.ndarray:
    out = np.empty(len(lex_ords), dtype=np.int64)
    for i, o in enumerate(lex_ords):
        did = lexical.doc_ids[o]
        e = index.ordinal_of.get(did)
        if e is None:
            raise IndexMismatchError(f"doc {did!r} is in the lexical index but not the embedding index")
        out[i] = e
    return out


def rerank(q: QueryEmbeddings, params: RerankParams, lexical: LexicalIndex,
           index: CompressedIndex) -> RankedList:
    pool = _to_embedding_ordinals(lexical_pool(q, params.n, lexical), lexical, index)
    return ranked_from_ordinals(q.query_id, pool, exact_scores(q, pool, index), index, params.k)


def ladr_search(q: QueryEmbeddings, params: LadrParams, lexical: LexicalIndex,
                graph: ProximityGraph, index: CompressedIndex, return_scored: bool = False):
    """Adaptive graph expansion over a BM25 seed pool.

    ``graph`` is indexed by lexical ordinal. Returns the top-``k`` list and,
    with ``return_scored``, the set of embedding ordinals that were scored.
    """
    if graph.K < params.k_neighbors:
        logger.warning("graph fan-out %d < k_neighbors %d; using what is there", graph.K, params.k_neighbors)
    if len(graph) != lexical.doc_count:
        raise IndexMismatchError("graph does not cover the lexical index")
    seed = lexical_pool(q, params.n0, lexical)
    if len(seed) == 0:
        logger.info("query %s: empty seed pool", q.query_id)
        empty = RankedList(q.query_id, [])
        return (empty, np.zeros(0, np.int64)) if return_scored else empty

    # lexical ordinal <-> embedding ordinal, resolved lazily
    lex_of = {}
    emb = _to_embedding_ordinals(seed, lexical, index)
    for lo, eo in zip(seed, emb):
        lex_of[int(eo)] = int(lo)
    scores = list(exact_scores(q, emb, index))
    ords = list(emb)
    seen = set(int(x) for x in seed)

    for _ in range(params.max_iters):
        top = _kernels.top_k(np.asarray(ords), np.asarray(scores), params.c, index.tie_rank)
        frontier = []
        for j in top:
            for nb in graph.neighbors[lex_of[int(ords[j])]][:params.k_neighbors]:
                nb = int(nb)
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        if not frontier:
            break
        new_emb = _to_embedding_ordinals(frontier, lexical, index)
        for lo, eo in zip(frontier, new_emb):
            lex_of[int(eo)] = lo
        ords.extend(new_emb)
        scores.extend(exact_scores(q, new_emb, index))

    ranked = ranked_from_ordinals(q.query_id, np.asarray(ords), np.asarray(scores), index, params.k)
    if return_scored:
        return ranked, np.asarray(ords)
    return ranked
