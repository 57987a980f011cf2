"""Deterministic stand-ins for a neural encoder and a labelled collection.

``SyntheticEncoder`` maps every distinct token string to a fixed random
unit vector keyed by ``(token, seed)``, so exact lexical matches score 1.0
under MaxSim and unrelated tokens score near 0. An optional context noise
term perturbs each occurrence by its (doc, position) so that occurrences of
one token can land in different clusters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import TokenMatrix
from .errors import ConfigError
from .text import tokenize


def _key_rng(*parts) -> np.random.Generator:
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=16)
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


class Vocabulary:
    """Token string <-> integer id, ids assigned in first-seen order."""

    def __init__(self, tokens=()):
        self._ids: dict[str, int] = {}
        self._tokens: list[str] = []
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        i = self._ids.get(token)
        if i is None:
            i = self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return i

    def id(self, token: str) -> int | None:
        return self._ids.get(token)

    def token(self, i: int) -> str:
        return self._tokens[i]

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self._tokens, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


class SyntheticEncoder:
    def __init__(self, dim: int = 64, seed: int = 0, vocab: Vocabulary | None = None,
                 context_noise: float = 0.0):
        if dim < 2:
            raise ConfigError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self.vocab = vocab if vocab is not None else Vocabulary()
        self.context_noise = context_noise
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            g = _key_rng("tok", self.seed, token).standard_normal(self.dim)
            v = (g / np.linalg.norm(g)).astype(np.float32)
            self._cache[token] = v
        return v

    def encode(self, text: str, doc_id: str = "") -> TokenMatrix:
        toks = tokenize(text)
        ids = np.array([self.vocab.add(t) for t in toks], dtype=np.uint32)
        if not toks:
            return TokenMatrix(doc_id, np.zeros((0, self.dim), np.float32), ids)
        rows = np.stack([self.token_vector(t) for t in toks])
        if self.context_noise > 0:
            noise = np.stack([_key_rng("ctx", self.seed, doc_id, i, t).standard_normal(self.dim)
                              for i, t in enumerate(toks)])
            rows = rows.astype(np.float64) + self.context_noise * noise / np.sqrt(self.dim)
            rows = (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)
        return TokenMatrix(doc_id, rows, ids)

    def encode_query(self, query_id: str, text: str):
        from .plaid import QueryEmbeddings

        tm = self.encode(text, doc_id=query_id)
        return QueryEmbeddings(query_id, tm.vectors, text=text)


def synthetic_encode(text: str, dim: int, seed: int, doc_id: str = "",
                     vocab: Vocabulary | None = None) -> TokenMatrix:
    return SyntheticEncoder(dim, seed, vocab).encode(text, doc_id)


# ---------------------------------------------------------------------------
# labelled collections
# ---------------------------------------------------------------------------

_CONS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticCollection:
    docs: list[dict]
    queries: list[dict]
    qrels: dict[str, dict[str, int]] = field(default_factory=dict)

    def texts(self) -> list[str]:
        return [d["text"] for d in self.docs]

    def doc_ids(self) -> list[str]:
        return [d["doc_id"] for d in self.docs]

    def write(self, root) -> dict[str, Path]:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        paths = {"corpus": root / "corpus.jsonl", "queries": root / "queries.jsonl",
                 "qrels": root / "qrels.txt"}
        with open(paths["corpus"], "w", encoding="utf-8") as f:
            for d in self.docs:
                f.write(json.dumps(d, ensure_ascii=False) + "\n")
        with open(paths["queries"], "w", encoding="utf-8") as f:
            for q in self.queries:
                f.write(json.dumps(q, ensure_ascii=False) + "\n")
        with open(paths["qrels"], "w", encoding="utf-8") as f:
            for qid, judged in self.qrels.items():
                for did, g in judged.items():
                    f.write(f"{qid} 0 {did} {g}\n")
        return paths


def _make_words(rng, n):
    words, seen = [], set()
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(_CONS[rng.integers(len(_CONS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def make_collection(n_docs: int, n_queries: int, seed: int, vocab_size: int = 2000,
                    n_topics: int = 20, topic_words: int = 40, doc_len=(12, 40),
                    query_len=(2, 4), topic_mix: float = 0.45) -> SyntheticCollection:
    """Topic-mixture corpus with queries sampled from (and judged against) its docs.

    Each query is drawn from one source doc (grade 2); other docs of the same
    topic that contain at least half of the query words get grade 1.
    """
    rng = np.random.default_rng(seed)
    words = _make_words(rng, vocab_size)
    rank = {w: i for i, w in enumerate(words)}
    zipf = 1.0 / np.arange(1, vocab_size + 1)
    zipf /= zipf.sum()
    topics = [rng.choice(np.arange(50, vocab_size), size=topic_words, replace=False)
              for _ in range(n_topics)]

    docs, doc_topic, doc_sets = [], [], []
    for i in range(n_docs):
        t = int(rng.integers(n_topics))
        L = int(rng.integers(doc_len[0], doc_len[1] + 1))
        from_topic = rng.random(L) < topic_mix
        idx = np.where(from_topic, rng.choice(topics[t], size=L), rng.choice(vocab_size, size=L, p=zipf))
        toks = [words[j] for j in idx]
        docs.append({"doc_id": f"d{i:06d}", "text": " ".join(toks)})
        doc_topic.append(t)
        doc_sets.append(set(toks))

    queries, qrels = [], {}
    by_topic: dict[int, list[int]] = {}
    for i, t in enumerate(doc_topic):
        by_topic.setdefault(t, []).append(i)
    for q in range(n_queries):
        src = int(rng.integers(n_docs))
        cand = sorted(w for w in doc_sets[src] if rank[w] >= 50) or sorted(doc_sets[src])
        m = min(len(cand), int(rng.integers(query_len[0], query_len[1] + 1)))
        qwords = [cand[j] for j in rng.choice(len(cand), size=m, replace=False)]
        qid = f"q{q:05d}"
        queries.append({"query_id": qid, "text": " ".join(qwords)})
        judged = {docs[src]["doc_id"]: 2}
        need = (len(qwords) + 1) // 2
        for j in by_topic[doc_topic[src]]:
            if j != src and len(doc_sets[j].intersection(qwords)) >= need:
                judged[docs[j]["doc_id"]] = 1
        qrels[qid] = judged
    return SyntheticCollection(docs, queries, qrels)
