"""Compressed token-embedding index.

Every document token is stored as the id of its nearest centroid plus a
per-dimension bucket code for the residual (token minus centroid). An
inverted file maps each centroid to the documents that have at least one
token assigned to it.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, CorruptIndexError, InputError

logger = logging.getLogger(__name__)

VALID_NBITS = (1, 2, 4, 8)
UNIT_TOL = 1e-4
_ASSIGN_CHUNK = 1 << 15


@dataclass
class TokenMatrix:
    """Token embeddings of one document (or query), one unit vector per row."""

    doc_id: str
    vectors: np.ndarray
    token_ids: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise InputError(f"{self.doc_id!r}: vectors must be a 2-d array")
        if self.token_ids is not None:
            self.token_ids = np.asarray(self.token_ids, dtype=np.uint32)
            if len(self.token_ids) != len(self.vectors):
                raise InputError(f"{self.doc_id!r}: token_ids and vectors differ in length")

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def check_unit(self, tol: float = UNIT_TOL) -> None:
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > tol:
            raise InputError(f"{self.doc_id!r}: vectors are not unit-norm")


@dataclass(frozen=True)
class IndexConfig:
    dim: int = 64
    nclusters: int = 1024
    nbits: int = 4
    seed: int = 0
    kmeans_iters: int = 20
    sample_cap: int = 1 << 16
    # shrink nclusters to total_tokens // 16 on small corpora
    auto_scale: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        if self.nclusters < 1:
            raise ConfigError("nclusters must be >= 1")
        if self.nbits not in VALID_NBITS:
            raise ConfigError(f"nbits must be one of {VALID_NBITS}, got {self.nbits}")
        if self.kmeans_iters < 1:
            raise ConfigError("kmeans_iters must be >= 1")
        if self.sample_cap < 1:
            raise ConfigError("sample_cap must be >= 1")

    def effective_nclusters(self, total_tokens: int) -> int:
        if not self.auto_scale:
            return self.nclusters
        return max(1, min(self.nclusters, total_tokens // 16))


@dataclass
class Codebook:
    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ConfigError("codebook needs at least one centroid")

    @property
    def nclusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class ResidualCodec:
    """Scalar quantizer shared by every residual dimension.

    Bucket ``i`` covers ``[cutoffs[i-1], cutoffs[i])``; the first and last
    buckets are open towards minus/plus infinity.
    """

    nbits: int
    cutoffs: np.ndarray
    representatives: np.ndarray

    def __post_init__(self):
        if self.nbits not in VALID_NBITS:
            raise ConfigError(f"nbits must be one of {VALID_NBITS}, got {self.nbits}")
        self.cutoffs = np.asarray(self.cutoffs, dtype=np.float32)
        self.representatives = np.asarray(self.representatives, dtype=np.float32)
        nb = 1 << self.nbits
        if self.cutoffs.shape != (nb - 1,) or self.representatives.shape != (nb,):
            raise ConfigError("codec arrays do not match nbits")

    @property
    def nbuckets(self) -> int:
        return 1 << self.nbits

    def quantize(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float32)
        return np.searchsorted(self.cutoffs, values, side="right").astype(np.uint8)

    def decode(self, codes) -> np.ndarray:
        return self.representatives[np.asarray(codes)]


def _normalize_rows(X):
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


def _assign(X, centroids):
    """Nearest centroid by cosine for every row; ties go to the lowest id."""
    cids = np.empty(X.shape[0], dtype=np.int64)
    best = np.empty(X.shape[0], dtype=np.float32)
    for lo in range(0, X.shape[0], _ASSIGN_CHUNK):
        sims = X[lo:lo + _ASSIGN_CHUNK] @ centroids.T
        a = np.argmax(sims, axis=1)
        cids[lo:lo + _ASSIGN_CHUNK] = a
        best[lo:lo + _ASSIGN_CHUNK] = sims[np.arange(len(a)), a]
    return cids, best


def train_codebook(samples, cfg: IndexConfig) -> Codebook:
    """Spherical k-means.

    Centroids are re-normalized after every update. A cluster that ends up
    empty is re-seeded with the sample currently worst served by its own
    centroid (lowest cosine), taking samples in order of increasing cosine.
    """
    X = np.ascontiguousarray(samples, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("cannot train a codebook on an empty sample set")
    if X.shape[1] != cfg.dim:
        raise InputError(f"sample dim {X.shape[1]} != configured dim {cfg.dim}")

    n, k = X.shape[0], cfg.nclusters
    rng = np.random.default_rng(cfg.seed)
    init = rng.choice(n, size=k, replace=n < k)
    C = X[np.sort(init)].copy()

    prev = None
    for _ in range(cfg.kmeans_iters):
        assign, best = _assign(X, C)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros((k, cfg.dim), dtype=np.float64)
        np.add.at(sums, assign, X)
        norms = np.linalg.norm(sums, axis=1)
        empty = (counts == 0) | (norms == 0)
        C = np.empty_like(C)
        full = ~empty
        C[full] = (sums[full] / norms[full, None]).astype(np.float32)
        if empty.any():
            donors = np.argsort(best, kind="stable")
            for slot, c in enumerate(np.flatnonzero(empty)):
                C[c] = X[donors[slot % n]]
        if prev is not None and not empty.any() and np.array_equal(assign, prev):
            break
        prev = assign
    return Codebook(C)


def fit_residual_codec(residuals, nbits: int) -> ResidualCodec:
    """Quantile buckets over residual components pooled across dimensions.

    Cutoffs sit at the ``i / 2**nbits`` quantiles; each bucket is represented
    by the mean of the components falling into it (the interval midpoint
    when a bucket is empty). Tied quantiles are nudged apart by one ulp so
    cutoffs stay strictly ascending.
    """
    if nbits not in VALID_NBITS:
        raise ConfigError(f"nbits must be one of {VALID_NBITS}, got {nbits}")
    r = np.asarray(residuals, dtype=np.float32).ravel()
    if r.size == 0:
        raise InputError("residual sample is empty")
    nb = 1 << nbits
    qs = np.arange(1, nb) / nb
    cut = np.quantile(r.astype(np.float64), qs).astype(np.float32)
    for i in range(1, len(cut)):
        if cut[i] <= cut[i - 1]:
            cut[i] = np.nextafter(cut[i - 1], np.float32(np.inf))

    bucket = np.searchsorted(cut, r, side="right")
    sums = np.bincount(bucket, weights=r.astype(np.float64), minlength=nb)
    counts = np.bincount(bucket, minlength=nb)
    lo = np.concatenate([[min(float(r.min()), float(cut[0]))], cut.astype(np.float64)])
    hi = np.concatenate([cut.astype(np.float64), [max(float(r.max()), float(cut[-1]))]])
    reps = np.where(counts > 0, sums / np.maximum(counts, 1), (lo + hi) / 2)
    return ResidualCodec(nbits, cut, reps.astype(np.float32))


def quantize_token(vector, codebook: Codebook, codec: ResidualCodec) -> tuple[int, np.ndarray]:
    v = np.asarray(vector, dtype=np.float32)
    if v.shape != (codebook.dim,):
        raise InputError(f"vector shape {v.shape} does not match dim {codebook.dim}")
    cid = int(np.argmax(codebook.centroids @ v))
    return cid, codec.quantize(v - codebook.centroids[cid])


@dataclass
class CompressedIndex:
    """In-memory searchable index (immutable once built).

    Tokens of document ``d`` occupy rows ``doc_offsets[d]:doc_offsets[d+1]``
    of ``centroid_ids``/``codes``/``token_ids``. The inverted file and the
    per-document distinct-centroid lists are both stored in CSR form.
    """

    codebook: Codebook
    codec: ResidualCodec
    doc_ids: list[str]
    doc_offsets: np.ndarray
    centroid_ids: np.ndarray
    codes: np.ndarray
    ivf_offsets: np.ndarray
    ivf_docs: np.ndarray
    token_ids: np.ndarray | None = None
    doc_cent_offsets: np.ndarray = field(init=False, repr=False)
    doc_cents: np.ndarray = field(init=False, repr=False)
    tie_rank: np.ndarray = field(init=False, repr=False)
    ordinal_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.doc_offsets = np.asarray(self.doc_offsets, dtype=np.int64)
        self.centroid_ids = np.asarray(self.centroid_ids, dtype=np.int32)
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        self.ivf_offsets = np.asarray(self.ivf_offsets, dtype=np.int64)
        self.ivf_docs = np.asarray(self.ivf_docs, dtype=np.int64)
        if self.token_ids is not None:
            self.token_ids = np.asarray(self.token_ids, dtype=np.uint32)
        self._validate()
        n, C = self.n_docs, self.nclusters
        doc_of_tok = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.doc_offsets))
        pairs = np.unique(doc_of_tok * C + self.centroid_ids)
        self.doc_cents = (pairs % C).astype(np.int64)
        self.doc_cent_offsets = np.searchsorted(pairs // C, np.arange(n + 1)).astype(np.int64)
        order = sorted(range(n), key=self.doc_ids.__getitem__)
        self.tie_rank = np.empty(n, dtype=np.int64)
        self.tie_rank[order] = np.arange(n)
        self.ordinal_of = {d: i for i, d in enumerate(self.doc_ids)}
        if len(self.ordinal_of) != n:
            raise InputError("duplicate doc_id in index")

    def _validate(self):
        n = len(self.doc_ids)
        T = len(self.centroid_ids)
        if self.doc_offsets.shape != (n + 1,) or self.doc_offsets[0] != 0 or self.doc_offsets[-1] != T:
            raise CorruptIndexError("document offsets do not cover the token arrays")
        if np.any(np.diff(self.doc_offsets) < 1):
            raise CorruptIndexError("every document needs at least one token")
        if self.codes.shape != (T, self.dim):
            raise CorruptIndexError("code array has the wrong shape")
        if T and (self.centroid_ids.min() < 0 or self.centroid_ids.max() >= self.nclusters):
            raise CorruptIndexError("centroid id out of range")
        if T and self.codes.max() >= self.codec.nbuckets:
            raise CorruptIndexError("residual code out of range")
        if self.ivf_offsets.shape != (self.nclusters + 1,) or self.ivf_offsets[-1] != len(self.ivf_docs):
            raise CorruptIndexError("ivf offsets do not match the posting array")
        if self.token_ids is not None and len(self.token_ids) != T:
            raise CorruptIndexError("token_ids length does not match token count")

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def n_tokens(self) -> int:
        return len(self.centroid_ids)

    @property
    def dim(self) -> int:
        return self.codebook.dim

    @property
    def nclusters(self) -> int:
        return self.codebook.nclusters

    def ivf_list(self, centroid_id: int) -> np.ndarray:
        return self.ivf_docs[self.ivf_offsets[centroid_id]:self.ivf_offsets[centroid_id + 1]]

    @property
    def ivf(self) -> dict[int, list[int]]:
        return {c: self.ivf_list(c).tolist() for c in range(self.nclusters)
                if self.ivf_offsets[c + 1] > self.ivf_offsets[c]}

    def token_slice(self, ordinal: int) -> slice:
        return slice(int(self.doc_offsets[ordinal]), int(self.doc_offsets[ordinal + 1]))

    def decompress_doc(self, ordinal: int) -> np.ndarray:
        s = self.token_slice(ordinal)
        return _kernels.decompress(self.centroid_ids[s], self.codes[s],
                                   self.codebook.centroids, self.codec.representatives)

    def equals(self, other: "CompressedIndex") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)
        return (self.doc_ids == other.doc_ids
                and self.codec.nbits == other.codec.nbits
                and same(self.codebook.centroids, other.codebook.centroids)
                and same(self.codec.cutoffs, other.codec.cutoffs)
                and same(self.codec.representatives, other.codec.representatives)
                and same(self.doc_offsets, other.doc_offsets)
                and same(self.centroid_ids, other.centroid_ids)
                and same(self.codes, other.codes)
                and same(self.ivf_offsets, other.ivf_offsets)
                and same(self.ivf_docs, other.ivf_docs)
                and same(self.token_ids, other.token_ids))


def decompress_token(centroid_id: int, code, index: CompressedIndex) -> np.ndarray:
    code = np.asarray(code, dtype=np.uint8)
    if not 0 <= centroid_id < index.nclusters:
        raise CorruptIndexError(f"centroid id {centroid_id} out of range")
    if code.shape != (index.dim,):
        raise CorruptIndexError(f"code length {code.shape} != dim {index.dim}")
    if code.size and code.max() >= index.codec.nbuckets:
        raise CorruptIndexError("code value exceeds the codec's bucket count")
    out = _kernels.decompress(np.array([centroid_id], dtype=np.int32), code[None, :],
                              index.codebook.centroids, index.codec.representatives)
    return out[0]


def build_index(docs, cfg: IndexConfig) -> CompressedIndex:
    """Train the codebook and codec on a seeded token sample, then encode every doc."""
    docs = list(docs)
    if not docs:
        raise ConfigError("cannot build an index over an empty corpus")
    for d in docs:
        if len(d) == 0:
            raise InputError(f"document {d.doc_id!r} has no tokens")
        if d.dim != cfg.dim:
            raise InputError(f"document {d.doc_id!r} has dim {d.dim}, expected {cfg.dim}")

    X = np.concatenate([d.vectors for d in docs]).astype(np.float32, copy=False)
    T = X.shape[0]
    k = cfg.effective_nclusters(T)
    if k != cfg.nclusters:
        logger.info("scaling nclusters %d -> %d for %d tokens", cfg.nclusters, k, T)
    rng = np.random.default_rng(cfg.seed)
    sample = np.sort(rng.choice(T, size=cfg.sample_cap, replace=False)) if T > cfg.sample_cap else np.arange(T)

    codebook = train_codebook(X[sample], dataclasses.replace(cfg, nclusters=k))
    C = codebook.centroids
    cids, _ = _assign(X, C)
    residuals = X - C[cids]
    codec = fit_residual_codec(residuals[sample], cfg.nbits)
    codes = codec.quantize(residuals)

    lens = np.array([len(d) for d in docs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lens)])
    doc_of_tok = np.repeat(np.arange(len(docs), dtype=np.int64), lens)
    pairs = np.unique(cids * len(docs) + doc_of_tok)
    ivf_docs = pairs % len(docs)
    ivf_offsets = np.searchsorted(pairs // len(docs), np.arange(k + 1))

    token_ids = None
    if all(d.token_ids is not None for d in docs):
        token_ids = np.concatenate([d.token_ids for d in docs])

    return CompressedIndex(
        codebook=codebook,
        codec=codec,
        doc_ids=[d.doc_id for d in docs],
        doc_offsets=offsets,
        centroid_ids=cids.astype(np.int32),
        codes=codes,
        ivf_offsets=ivf_offsets,
        ivf_docs=ivf_docs,
        token_ids=token_ids,
    )
