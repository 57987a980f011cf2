"""BM25 inverted index with block-max WAND retrieval and a BM25 document graph."""

from __future__ import annotations

import io
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError, FormatError, InputError
from .plaid import RankedList
from .text import analyze

BLOCK_SIZE = 64
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4
GRAPH_MAGIC = b"LLGRF1"
LEX_MAGIC = b"LLLEX1"


def idf(df, n_docs):
    """ln((N - df + 0.5) / (df + 0.5) + 1); always positive."""
    df = np.asarray(df, dtype=np.float64)
    return np.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class LexicalIndex:
    doc_ids: list[str]
    doc_lengths: np.ndarray
    terms: list[str]
    term_starts: np.ndarray
    post_docs: np.ndarray
    post_tfs: np.ndarray
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    block_size: int = BLOCK_SIZE
    term_id: dict = field(init=False, repr=False)
    ordinal_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.doc_lengths = np.asarray(self.doc_lengths, dtype=np.int64)
        self.term_starts = np.asarray(self.term_starts, dtype=np.int64)
        self.post_docs = np.asarray(self.post_docs, dtype=np.int64)
        self.post_tfs = np.asarray(self.post_tfs, dtype=np.int64)
        self.term_id = {t: i for i, t in enumerate(self.terms)}
        self.ordinal_of = {d: i for i, d in enumerate(self.doc_ids)}
        n = self.doc_count
        self.avg_doc_len = float(self.doc_lengths.mean()) if n else 0.0
        # per-document length normaliser, shared by every scorer
        self.norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths / self.avg_doc_len)
        self.df = np.diff(self.term_starts)
        self.idf = idf(self.df, n)
        self._build_blocks()

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def _contrib(self, t: int, lo: int, hi: int) -> np.ndarray:
        tf = self.post_tfs[lo:hi].astype(np.float64)
        return self.idf[t] * tf * (self.k1 + 1.0) / (tf + self.norm[self.post_docs[lo:hi]])

    def _build_blocks(self):
        last, bmax, starts = [], [], [0]
        tmax = np.zeros(len(self.terms))
        for t in range(len(self.terms)):
            lo, hi = self.term_starts[t], self.term_starts[t + 1]
            c = self._contrib(t, lo, hi)
            for s in range(0, hi - lo, self.block_size):
                last.append(self.post_docs[lo + min(s + self.block_size, hi - lo) - 1])
                bmax.append(c[s:s + self.block_size].max())
            starts.append(len(last))
            tmax[t] = c.max() if hi > lo else 0.0
        self.blk_last = np.asarray(last, dtype=np.int64)
        self.blk_max = np.asarray(bmax, dtype=np.float64)
        self.blk_starts = np.asarray(starts, dtype=np.int64)
        self.term_max = tmax

    def postings(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        t = self.term_id.get(term)
        if t is None:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        s = slice(self.term_starts[t], self.term_starts[t + 1])
        return self.post_docs[s], self.post_tfs[s]

    def query_terms(self, text: str) -> list[str]:
        return analyze(text)

    def _term_ids(self, terms) -> list[int]:
        # a query is a set of terms: duplicates count once, first occurrence fixes the order
        seen, out = set(), []
        for term in terms:
            t = self.term_id.get(term)
            if t is not None and t not in seen:
                seen.add(t)
                out.append(t)
        return out

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(LEX_MAGIC + struct.pack("<ddII", self.k1, self.b, self.block_size, self.doc_count))
        header = json.dumps({"doc_ids": self.doc_ids, "terms": self.terms}, ensure_ascii=False).encode("utf-8")
        out.write(struct.pack("<Q", len(header)) + header)
        for a in (self.doc_lengths, self.term_starts, self.post_docs, self.post_tfs):
            out.write(struct.pack("<Q", len(a)) + a.astype("<i8").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LexicalIndex":
        if data[:6] != LEX_MAGIC:
            raise FormatError("not a lexical index file (bad magic)")
        try:
            k1, b, bs, _ = struct.unpack_from("<ddII", data, 6)
            pos = 6 + 24
            (hl,) = struct.unpack_from("<Q", data, pos)
            header = json.loads(data[pos + 8:pos + 8 + hl].decode("utf-8"))
            pos += 8 + hl
            arrays = []
            for _ in range(4):
                (n,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                if pos + 8 * n > len(data):
                    raise FormatError("truncated lexical index")
                arrays.append(np.frombuffer(data, dtype="<i8", count=n, offset=pos).astype(np.int64))
                pos += 8 * n
        except struct.error as e:
            raise FormatError(f"truncated lexical index: {e}") from None
        if pos != len(data):
            raise FormatError("trailing bytes in lexical index")
        return cls(header["doc_ids"], arrays[0], header["terms"], arrays[1], arrays[2], arrays[3],
                   k1=k1, b=b, block_size=bs)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LexicalIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_lexical_index(texts, doc_ids=None, k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                        block_size: int = BLOCK_SIZE) -> LexicalIndex:
    texts = list(texts)
    if not texts:
        raise ConfigError("cannot build a lexical index over an empty corpus")
    if doc_ids is None:
        doc_ids = [str(i) for i in range(len(texts))]
    doc_ids = list(doc_ids)
    if len(doc_ids) != len(texts):
        raise InputError("doc_ids and texts differ in length")
    lengths = np.zeros(len(texts), dtype=np.int64)
    inverted: dict[str, list[tuple[int, int]]] = {}
    for d, text in enumerate(texts):
        toks = analyze(text)
        lengths[d] = len(toks)
        for term, tf in Counter(toks).items():
            inverted.setdefault(term, []).append((d, tf))
    if lengths.sum() == 0:
        raise InputError("corpus contains no indexable terms")
    terms = sorted(inverted)
    starts = np.zeros(len(terms) + 1, dtype=np.int64)
    docs, tfs = [], []
    for i, term in enumerate(terms):
        plist = inverted[term]
        starts[i + 1] = starts[i] + len(plist)
        docs.extend(p[0] for p in plist)
        tfs.extend(p[1] for p in plist)
    return LexicalIndex(doc_ids, lengths, terms, starts, np.array(docs), np.array(tfs),
                        k1=k1, b=b, block_size=block_size)


def bm25_score(terms, ordinal: int, index: LexicalIndex) -> float:
    s = 0.0
    for t in index._term_ids(terms):
        docs, tfs = index.postings(index.terms[t])
        j = np.searchsorted(docs, ordinal)
        if j < len(docs) and docs[j] == ordinal:
            tf = float(tfs[j])
            s += index.idf[t] * tf * (index.k1 + 1.0) / (tf + index.norm[ordinal])
    return s


def _as_ranked(query_id, ords, scores, index) -> RankedList:
    return RankedList(query_id, [(index.doc_ids[o], float(s)) for o, s in zip(ords, scores)])


def bm25_topn_bruteforce(terms, n: int, index: LexicalIndex) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ConfigError("n must be >= 1")
    scores = np.zeros(index.doc_count)
    for t in index._term_ids(terms):
        lo, hi = index.term_starts[t], index.term_starts[t + 1]
        scores[index.post_docs[lo:hi]] += index._contrib(t, lo, hi)
    hit = np.flatnonzero(scores > 0)
    order = np.lexsort((hit, -scores[hit]))[:n]
    return hit[order], scores[hit[order]]


def bm25_topn_wand(terms, n: int, index: LexicalIndex) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-n ordinals and scores by block-max WAND."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    tids = index._term_ids(terms)
    if not tids:
        return np.zeros(0, np.int64), np.zeros(0)
    doc_parts, tf_parts, starts = [], [], [0]
    bl_parts, bm_parts, bstarts = [], [], [0]
    for t in tids:
        lo, hi = index.term_starts[t], index.term_starts[t + 1]
        doc_parts.append(index.post_docs[lo:hi])
        tf_parts.append(index.post_tfs[lo:hi])
        starts.append(starts[-1] + hi - lo)
        blo, bhi = index.blk_starts[t], index.blk_starts[t + 1]
        bl_parts.append(index.blk_last[blo:bhi])
        bm_parts.append(index.blk_max[blo:bhi])
        bstarts.append(bstarts[-1] + bhi - blo)
    n = min(n, index.doc_count)
    ords, scores = _kernels.bmw(
        np.concatenate(doc_parts), np.concatenate(tf_parts), np.asarray(starts, dtype=np.int64),
        np.concatenate(bl_parts), np.concatenate(bm_parts), np.asarray(bstarts, dtype=np.int64),
        index.idf[tids], index.term_max[tids], index.norm, float(index.k1), n)
    order = np.lexsort((ords, -scores))
    return ords[order], scores[order]


def bm25_search_wand(terms, n: int, index: LexicalIndex, query_id: str = "") -> RankedList:
    ords, scores = bm25_topn_wand(terms, n, index)
    return _as_ranked(query_id, ords, scores, index)


def bm25_search_bruteforce(terms, n: int, index: LexicalIndex, query_id: str = "") -> RankedList:
    ords, scores = bm25_topn_bruteforce(terms, n, index)
    return _as_ranked(query_id, ords, scores, index)


# ---------------------------------------------------------------------------
# document proximity graph
# ---------------------------------------------------------------------------

GRAPH_QUERY_TERMS = 16


@dataclass
class ProximityGraph:
    """Per-document BM25 neighbours, nearest first, self excluded."""

    K: int
    neighbors: list[np.ndarray]

    def __post_init__(self):
        self.neighbors = [np.asarray(nb, dtype=np.int64) for nb in self.neighbors]

    def __len__(self):
        return len(self.neighbors)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(GRAPH_MAGIC + struct.pack("<I", self.K))
        for nb in self.neighbors:
            out.write(struct.pack("<I", len(nb)) + nb.astype("<u4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProximityGraph":
        if data[:6] != GRAPH_MAGIC:
            raise FormatError("not a graph file (bad magic)")
        if len(data) < 10:
            raise FormatError("truncated graph file")
        (K,) = struct.unpack_from("<I", data, 6)
        pos, nbs = 10, []
        while pos < len(data):
            if pos + 4 > len(data):
                raise FormatError("truncated graph file")
            (c,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + 4 * c > len(data):
                raise FormatError("truncated graph file")
            nbs.append(np.frombuffer(data, dtype="<u4", count=c, offset=pos).astype(np.int64))
            pos += 4 * c
        return cls(K, nbs)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProximityGraph":
        return cls.from_bytes(Path(path).read_bytes())

    def equals(self, other: "ProximityGraph") -> bool:
        return (self.K == other.K and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.neighbors, other.neighbors)))


def doc_query_terms(ordinal: int, text: str, index: LexicalIndex, m: int = GRAPH_QUERY_TERMS) -> list[str]:
    """The doc's ``m`` highest within-doc tf-idf terms (ties by term)."""
    tf = Counter(analyze(text))
    weighted = [(-c * index.idf[index.term_id[t]], t) for t, c in tf.items() if t in index.term_id]
    return [t for _, t in sorted(weighted)[:m]]


def build_proximity_graph(index: LexicalIndex, texts, K: int) -> ProximityGraph:
    if K < 1:
        raise ConfigError("K must be >= 1")
    texts = list(texts)
    if len(texts) != index.doc_count:
        raise InputError("texts do not match the lexical index")
    nbs = []
    for d, text in enumerate(texts):
        ords, _ = bm25_topn_wand(doc_query_terms(d, text, index), K + 1, index)
        nbs.append(ords[ords != d][:K])
    return ProximityGraph(K, nbs)


def read_corpus(path) -> list[dict]:
    """JSON-lines corpus: one ``{"doc_id": ..., "text": ...}`` object per line."""
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append({"doc_id": str(obj["doc_id"]), "text": obj["text"]})
            except (ValueError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad corpus record ({e})") from None
    return docs


def read_queries(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append({"query_id": str(obj["query_id"]), "text": obj["text"]})
            except (ValueError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad query record ({e})") from None
    return out

