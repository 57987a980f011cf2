"""Compare the numba kernels with the numpy fallback on one synthetic corpus.

    python benchmarks/bench_kernels.py --docs 2000 --queries 50

Each row times the same end-to-end call under both backends (first call
excluded so JIT compilation is not counted) and checks that the outputs agree.
"""

import argparse
import time

import numpy as np

from lateint import _kernels
from lateint.embedding import IndexConfig, build_index
from lateint.lexical import bm25_topn_wand, build_lexical_index
from lateint.plaid import PRESETS, exhaustive_search, plaid_search
from lateint.synthetic import SyntheticEncoder, make_collection


def timed(fn, items):
    fn(items[0])
    t0 = time.perf_counter()
    out = [fn(x) for x in items]
    return (time.perf_counter() - t0) * 1000 / len(items), out


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return a.doc_ids == b.doc_ids and np.allclose(a.scores, b.scores, rtol=0, atol=1e-5)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--docs", type=int, default=2000)
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    coll = make_collection(args.docs, args.queries, args.seed)
    enc = SyntheticEncoder(args.dim, args.seed, context_noise=0.3)
    docs = [enc.encode(d["text"], d["doc_id"]) for d in coll.docs]
    t0 = time.perf_counter()
    index = build_index(docs, IndexConfig(dim=args.dim, seed=args.seed))
    print(f"index: {index.n_docs} docs, {index.n_tokens} tokens, {index.nclusters} clusters "
          f"({time.perf_counter() - t0:.1f}s)")
    lex = build_lexical_index(coll.texts(), coll.doc_ids())
    qs = [enc.encode_query(q["query_id"], q["text"]) for q in coll.queries]
    terms = [lex.query_terms(q["text"]) for q in coll.queries]

    cases = {
        "exhaustive maxsim": (lambda q: exhaustive_search(q, index, 1000), qs),
        "plaid preset b": (lambda q: plaid_search(q, index, PRESETS["b"]), qs),
        "plaid preset c": (lambda q: plaid_search(q, index, PRESETS["c"]), qs),
        "bm25 wand top-1000": (lambda t: bm25_topn_wand(t, 1000, lex), terms),
    }
    backends = ["numba", "numpy"] if _kernels.HAVE_NUMBA else ["numpy"]
    print(f"{'operation':<22}" + "".join(f"{b + ' ms/q':>14}" for b in backends) + f"{'speedup':>10}  agree")
    for name, (fn, items) in cases.items():
        ms, outs = [], []
        for b in backends:
            with _kernels.use_backend(b):
                m, o = timed(fn, items)
            ms.append(m)
            outs.append(o)
        agree = len(outs) == 1 or all(same(x, y) for x, y in zip(*outs))
        speed = f"{ms[1] / ms[0]:>9.1f}x" if len(ms) == 2 else f"{'-':>10}"
        print(f"{name:<22}" + "".join(f"{m:>14.3f}" for m in ms) + speed + f"  {agree}")


if __name__ == "__main__":
    main()
