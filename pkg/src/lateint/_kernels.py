"""Hot inner loops.

Every kernel exists twice: a numba ``@njit`` version and a pure numpy
version. The active pair is chosen once at import time; set
``LATEINT_DISABLE_NUMBA=1`` to force the numpy path (or run without numba
installed). Both implementations are always importable by name so the
benchmark can compare them in one process.

Conventions shared by all kernels:

* query/centroid/embedding matrices are C-contiguous ``float32``;
* dot products are computed in ``float32``, per-document sums over query
  tokens are accumulated in ``float64`` in query-token order;
* documents are addressed by ordinal through CSR ``offsets`` arrays.
"""

import contextlib
import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("LATEINT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

# Slack applied to BM25 upper bounds before pruning, so that a bound summed
# in a different order than the exact score never drops a qualifying doc.
BOUND_SLACK = 1e-9
END_DOC = np.iinfo(np.int64).max


def _jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# residual decompression
# ---------------------------------------------------------------------------

def _dot_rows(A, B):
    """``sum_x A[..., x] * B[..., x]`` accumulated left to right in float32.

    numpy's pairwise ``sum`` rounds differently from the scalar loops of the
    numba kernels; a fixed left-to-right order keeps both backends bitwise equal.
    """
    acc = A[..., 0] * B[..., 0]
    for x in range(1, A.shape[-1]):
        acc += A[..., x] * B[..., x]
    return acc


def _sum_rows(M):
    """Float64 sum over axis 0, in row order."""
    acc = M[0].astype(np.float64)
    for i in range(1, M.shape[0]):
        acc += M[i]
    return acc


def decompress_numpy(cids, codes, centroids, reps):
    """Rebuild unit vectors from (centroid id, bucket codes) pairs."""
    out = centroids[cids] + reps[codes]
    if out.shape[0] == 0:
        return out
    norms = np.sqrt(_dot_rows(out, out))
    norms[norms == 0] = 1.0
    out /= norms[:, None]
    return out


def _decompress_row_py(buf, centroid, code, reps):
    dim = buf.shape[0]
    norm = np.float32(0.0)
    for x in range(dim):
        v = centroid[x] + reps[code[x]]
        buf[x] = v
        norm += v * v
    norm = np.sqrt(norm)
    if norm > 0:
        for x in range(dim):
            buf[x] = buf[x] / norm


_decompress_row = _jit(_decompress_row_py)


def _decompress_nb_py(cids, codes, centroids, reps):
    n = cids.shape[0]
    dim = centroids.shape[1]
    out = np.empty((n, dim), dtype=np.float32)
    for t in range(n):
        _decompress_row(out[t], centroids[cids[t]], codes[t], reps)
    return out


decompress_numba = _jit(_decompress_nb_py)


# ---------------------------------------------------------------------------
# exact MaxSim over decompressed tokens
# ---------------------------------------------------------------------------

def _maxsim_nb_py(Q, docs, offsets, cids, codes, centroids, reps):
    nq, dim = Q.shape
    out = np.zeros(docs.shape[0], dtype=np.float64)
    best = np.empty(nq, dtype=np.float32)
    buf = np.empty(dim, dtype=np.float32)
    for j in range(docs.shape[0]):
        d = docs[j]
        for i in range(nq):
            best[i] = -np.inf
        for t in range(offsets[d], offsets[d + 1]):
            _decompress_row(buf, centroids[cids[t]], codes[t], reps)
            for i in range(nq):
                s = np.float32(0.0)
                for x in range(dim):
                    s += Q[i, x] * buf[x]
                if s > best[i]:
                    best[i] = s
        acc = 0.0
        for i in range(nq):
            acc += np.float64(best[i])
        out[j] = acc
    return out


maxsim_numba = _jit(_maxsim_nb_py)

_CHUNK_ELEMS = 1 << 20


def _gather_tokens(docs, offsets):
    starts = offsets[docs]
    lens = offsets[docs + 1] - starts
    seg = np.zeros(len(docs), dtype=np.int64)
    np.cumsum(lens[:-1], out=seg[1:])
    tok = np.repeat(starts - seg, lens) + np.arange(lens.sum(), dtype=np.int64)
    return tok, seg


def maxsim_numpy(Q, docs, offsets, cids, codes, centroids, reps):
    """Vectorised MaxSim: sum over query tokens of the max doc-token dot."""
    docs = np.asarray(docs, dtype=np.int64)
    if docs.size == 0:
        return np.zeros(0, dtype=np.float64)
    tok, seg = _gather_tokens(docs, offsets)
    D = decompress_numpy(cids[tok], codes[tok], centroids, reps)
    nq, dim = Q.shape
    DT = np.ascontiguousarray(D.T)
    sims = np.empty((nq, D.shape[0]), dtype=np.float32)
    tmp = np.empty_like(sims)
    step = max(1, _CHUNK_ELEMS // nq)
    for lo in range(0, D.shape[0], step):
        hi = min(lo + step, D.shape[0])
        acc, t = sims[:, lo:hi], tmp[:, :hi - lo]
        np.multiply.outer(Q[:, 0], DT[0, lo:hi], out=acc)
        for x in range(1, dim):
            np.multiply.outer(Q[:, x], DT[x, lo:hi], out=t)
            acc += t
    best = np.maximum.reduceat(sims, seg, axis=1)
    return _sum_rows(best)


# ---------------------------------------------------------------------------
# approximate scoring over surviving centroids
# ---------------------------------------------------------------------------

def _approx_nb_py(S, mask, docs, dc_offsets, dc_cents):
    nq = S.shape[0]
    out = np.zeros(docs.shape[0], dtype=np.float64)
    best = np.empty(nq, dtype=np.float32)
    for j in range(docs.shape[0]):
        d = docs[j]
        hit = False
        for i in range(nq):
            best[i] = -np.inf
        for e in range(dc_offsets[d], dc_offsets[d + 1]):
            c = dc_cents[e]
            if mask[c]:
                hit = True
                for i in range(nq):
                    if S[i, c] > best[i]:
                        best[i] = S[i, c]
        if hit:
            acc = 0.0
            for i in range(nq):
                acc += np.float64(best[i])
            out[j] = acc
    return out


approx_numba = _jit(_approx_nb_py)


def approx_numpy(S, mask, docs, dc_offsets, dc_cents):
    docs = np.asarray(docs, dtype=np.int64)
    if docs.size == 0:
        return np.zeros(0, dtype=np.float64)
    ent, seg = _gather_tokens(docs, dc_offsets)
    masked = np.where(mask[None, :], S, np.float32(-np.inf))
    best = np.maximum.reduceat(masked[:, dc_cents[ent]], seg, axis=1)
    hit = ~np.isneginf(best[0])
    return np.where(hit, _sum_rows(np.where(hit, best, 0.0)), 0.0)


# ---------------------------------------------------------------------------
# Block-max WAND
# ---------------------------------------------------------------------------

def _bmw_py(docs, tfs, starts, blk_last, blk_max, blk_starts, idf, term_max, norm, k1, n):
    m = idf.shape[0]
    pos = starts[:m].copy()
    bpos = blk_starts[:m].copy()
    cur = np.empty(m, dtype=np.int64)
    for t in range(m):
        cur[t] = docs[pos[t]] if pos[t] < starts[t + 1] else END_DOC
    order = np.arange(m)
    hs = np.empty(n, dtype=np.float64)
    hd = np.empty(n, dtype=np.int64)
    size = 0
    theta = 0.0
    slack = 1.0 + BOUND_SLACK
    while True:
        # insertion sort of terms by current doc; lists are short
        for a in range(1, m):
            t = order[a]
            b = a - 1
            while b >= 0 and cur[order[b]] > cur[t]:
                order[b + 1] = order[b]
                b -= 1
            order[b + 1] = t
        acc = 0.0
        p = -1
        for r in range(m):
            t = order[r]
            if cur[t] == END_DOC:
                break
            acc += term_max[t]
            if acc * slack > theta:
                p = r
                break
        if p < 0:
            break
        pivot = cur[order[p]]
        while p + 1 < m and cur[order[p + 1]] == pivot:
            p += 1
        bub = 0.0
        for r in range(p + 1):
            t = order[r]
            b = bpos[t]
            while b < blk_starts[t + 1] and blk_last[b] < pivot:
                b += 1
            bpos[t] = b
            if b < blk_starts[t + 1]:
                bub += blk_max[b]
        if bub * slack > theta:
            if cur[order[0]] == pivot:
                s = 0.0
                for t in range(m):
                    if cur[t] == pivot:
                        tf = np.float64(tfs[pos[t]])
                        s += idf[t] * tf * (k1 + 1.0) / (tf + norm[pivot])
                # min-heap on (score, -ordinal): root is the current n-th best
                if size < n:
                    i = size
                    hs[i] = s
                    hd[i] = pivot
                    size += 1
                    while i > 0:
                        par = (i - 1) // 2
                        if hs[i] < hs[par] or (hs[i] == hs[par] and hd[i] > hd[par]):
                            hs[i], hs[par] = hs[par], hs[i]
                            hd[i], hd[par] = hd[par], hd[i]
                            i = par
                        else:
                            break
                    if size == n:
                        theta = hs[0]
                elif s > hs[0]:
                    hs[0] = s
                    hd[0] = pivot
                    i = 0
                    while True:
                        lo = 2 * i + 1
                        if lo >= size:
                            break
                        w = lo
                        if lo + 1 < size and (hs[lo + 1] < hs[lo] or (hs[lo + 1] == hs[lo] and hd[lo + 1] > hd[lo])):
                            w = lo + 1
                        if hs[w] < hs[i] or (hs[w] == hs[i] and hd[w] > hd[i]):
                            hs[i], hs[w] = hs[w], hs[i]
                            hd[i], hd[w] = hd[w], hd[i]
                            i = w
                        else:
                            break
                    theta = hs[0]
                for t in range(m):
                    if cur[t] == pivot:
                        pos[t] += 1
                        cur[t] = docs[pos[t]] if pos[t] < starts[t + 1] else END_DOC
            else:
                for r in range(p):
                    t = order[r]
                    if cur[t] < pivot:
                        pos[t] += np.searchsorted(docs[pos[t]:starts[t + 1]], pivot)
                        cur[t] = docs[pos[t]] if pos[t] < starts[t + 1] else END_DOC
        else:
            nxt = END_DOC
            for r in range(p + 1):
                t = order[r]
                b = bpos[t]
                if b < blk_starts[t + 1] and blk_last[b] + 1 < nxt:
                    nxt = blk_last[b] + 1
            if p + 1 < m and cur[order[p + 1]] < nxt:
                nxt = cur[order[p + 1]]
            for r in range(p + 1):
                t = order[r]
                if cur[t] < nxt:
                    pos[t] += np.searchsorted(docs[pos[t]:starts[t + 1]], nxt)
                    cur[t] = docs[pos[t]] if pos[t] < starts[t + 1] else END_DOC
    return hd[:size].copy(), hs[:size].copy()


bmw_numba = _jit(_bmw_py)
# no vectorised form exists for WAND; the fallback is the interpreted loop
bmw_python = _bmw_py


if USE_NUMBA:
    decompress = decompress_numba
    maxsim = maxsim_numba
    approx = approx_numba
    bmw = bmw_numba
else:
    decompress = decompress_numpy
    maxsim = maxsim_numpy
    approx = approx_numpy
    bmw = bmw_python


def top_k(ordinals, scores, k, tie_rank):
    """Positions of the best ``k`` scores; ties broken by ascending ``tie_rank``."""
    ordinals = np.asarray(ordinals)
    if k <= 0 or ordinals.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((tie_rank[ordinals], -np.asarray(scores)))
    return order[:k]


_TABLE = {
    "numba": (decompress_numba, maxsim_numba, approx_numba, bmw_numba),
    "numpy": (decompress_numpy, maxsim_numpy, approx_numpy, bmw_python),
}


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route the dispatch names to one backend (benchmarks, tests)."""
    global decompress, maxsim, approx, bmw, BACKEND
    if name not in _TABLE:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    saved = (decompress, maxsim, approx, bmw, BACKEND)
    decompress, maxsim, approx, bmw = _TABLE[name]
    BACKEND = name
    try:
        yield
    finally:
        decompress, maxsim, approx, bmw, BACKEND = saved
