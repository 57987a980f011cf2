"""``lateint`` command line.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are the
flag names with dashes turned into underscores. Flags given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, LateIntError

log = logging.getLogger("lateint")


class Opts:
    """Command-line values layered over an optional JSON config."""

    def __init__(self, args: argparse.Namespace):
        self._args = args
        self._cfg = {}
        if getattr(args, "config", None):
            from .experiment import load_config

            self._cfg, _ = load_config(args.config)

    def get(self, key, default=None):
        v = getattr(self._args, key, None)
        if v is not None:
            return v
        return self._cfg.get(key, default)

    def need(self, key):
        v = self.get(key)
        if v is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")
        return v

    @property
    def raw(self) -> dict:
        return self._cfg


def _encoder(o: Opts, dim: int | None = None, vocab=None):
    from .synthetic import SyntheticEncoder

    seed = o.get("seed")
    if seed is None:
        raise ConfigError("--seed is required for synthetic embeddings")
    return SyntheticEncoder(dim=dim or o.get("dim", 64), seed=int(seed), vocab=vocab,
                            context_noise=float(o.get("context_noise", 0.0)))


def _vocab_path(index_path) -> Path:
    return Path(str(index_path) + ".vocab.json")


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def cmd_synth(o: Opts) -> int:
    from .synthetic import make_collection

    seed = o.need("seed")
    c = make_collection(int(o.get("n_docs", 1000)), int(o.get("n_queries", 50)), int(seed),
                        vocab_size=int(o.get("vocab_size", 2000)))
    paths = c.write(o.need("out"))
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def cmd_index_build(o: Opts) -> int:
    from .embedding import IndexConfig, build_index
    from .lexical import read_corpus
    from .storage import load_embeddings, save_index

    out = o.need("out")
    enc = None
    if o.get("embeddings"):
        docs = load_embeddings(o.get("embeddings"))
    elif o.get("corpus"):
        enc = _encoder(o)
        docs = [enc.encode(d["text"], d["doc_id"]) for d in read_corpus(o.get("corpus"))]
    else:
        raise ConfigError("index build needs --embeddings or --corpus")
    dim = next((m.dim for m in docs if len(m)), int(o.get("dim", 64)))
    cfg = IndexConfig(dim=dim, nclusters=int(o.get("nclusters", 1024)), nbits=int(o.get("nbits", 4)),
                      seed=int(o.get("seed", 0)), kmeans_iters=int(o.get("kmeans_iters", 20)),
                      sample_cap=int(o.get("sample_cap", 1 << 16)),
                      auto_scale=not o.get("no_auto_scale", False))
    index = build_index(docs, cfg)
    save_index(index, out)
    if enc is not None:
        enc.vocab.save(_vocab_path(out))
    print(json.dumps({"docs": index.n_docs, "tokens": index.n_tokens, "nclusters": index.nclusters,
                      "out": str(out)}))
    return 0


def cmd_index_inspect(o: Opts) -> int:
    from .storage import load_index

    index = load_index(o.need("index"))
    sizes = np.diff(index.ivf_offsets)
    lens = np.diff(index.doc_offsets)
    print(json.dumps({
        "docs": index.n_docs, "tokens": index.n_tokens, "dim": index.dim,
        "nclusters": index.nclusters, "nbits": index.codec.nbits,
        "token_ids": index.token_ids is not None,
        "doc_len_mean": float(lens.mean()) if len(lens) else 0.0,
        "ivf_len_mean": float(sizes.mean()), "ivf_len_max": int(sizes.max(initial=0)),
        "empty_clusters": int((sizes == 0).sum()),
    }, indent=2))
    return 0


def cmd_lexical_build(o: Opts) -> int:
    from .lexical import build_lexical_index, read_corpus

    docs = read_corpus(o.need("corpus"))
    lex = build_lexical_index([d["text"] for d in docs], [d["doc_id"] for d in docs],
                              k1=float(o.get("k1", 0.9)), b=float(o.get("b", 0.4)))
    lex.save(o.need("out"))
    print(json.dumps({"docs": lex.doc_count, "terms": len(lex.terms)}))
    return 0


def cmd_graph_build(o: Opts) -> int:
    from .lexical import LexicalIndex, build_proximity_graph, read_corpus

    lex = LexicalIndex.load(o.need("lexical"))
    docs = read_corpus(o.need("corpus"))
    if [d["doc_id"] for d in docs] != list(lex.doc_ids):
        raise ConfigError("corpus documents do not match the lexical index")
    g = build_proximity_graph(lex, [d["text"] for d in docs], int(o.get("K", 128)))
    g.save(o.need("out"))
    print(json.dumps({"docs": len(g), "K": g.K}))
    return 0


def _queries(o: Opts, index):
    from .lexical import read_queries
    from .plaid import QueryEmbeddings
    from .storage import load_embeddings

    qs = read_queries(o.need("queries"))
    if o.get("query_embeddings"):
        mats = {m.doc_id: m for m in load_embeddings(o.get("query_embeddings"))}
        out = []
        for q in qs:
            if q["query_id"] not in mats:
                raise ConfigError(f"no embedding for query {q['query_id']!r}")
            out.append(QueryEmbeddings(q["query_id"], mats[q["query_id"]].vectors, text=q["text"]))
        return out
    enc = _encoder(o, dim=index.dim)
    return [enc.encode_query(q["query_id"], q["text"]) for q in qs]


def cmd_search(o: Opts) -> int:
    from .bench import make_engine
    from .experiment import engine_params
    from .lexical import LexicalIndex, ProximityGraph
    from .metrics import Run, write_run
    from .storage import load_index

    engine = o.need("engine")
    index = load_index(o.need("index"))
    lexical = LexicalIndex.load(o.get("lexical")) if o.get("lexical") else None
    graph = ProximityGraph.load(o.get("graph")) if o.get("graph") else None
    keys = {"plaid": ("nprobe", "t_cs", "ndocs", "preset"), "rerank": ("n",),
            "ladr": ("n0", "k_neighbors", "c", "max_iters"), "exhaustive": ()}[engine]
    spec = {"engine": engine, **{k: o.get(k) for k in keys if o.get(k) is not None}}
    fn = make_engine(engine, engine_params(spec, int(o.get("k", 1000))), index=index, lexical=lexical, graph=graph)
    run = Run(tag=o.get("tag", engine))
    for q in _queries(o, index):
        run.add(fn(q))
    write_run(run, o.need("out"))
    print(json.dumps({"queries": len(run), "out": str(o.get("out"))}))
    return 0


def cmd_eval(o: Opts) -> int:
    from .metrics import DEFAULT_MEASURES, evaluate_run, read_qrels, read_run

    run = read_run(o.need("run"))
    qrels = read_qrels(o.need("qrels"))
    ref = read_run(o.get("reference")) if o.get("reference") else None
    measures = o.get("measures") or list(DEFAULT_MEASURES)
    if ref is None:
        measures = [m for m in measures if not m.startswith("rbo")]
    report = evaluate_run(run, qrels, measures, ref)
    if o.get("out"):
        report.write_jsonl(o.get("out"))
    print(json.dumps({"mean": report.mean, "n_queries": report.counts}, indent=2))
    return 0


def cmd_analyze_clusters(o: Opts) -> int:
    from .clusters import cluster_report, cluster_stats, format_report, write_histogram_csv
    from .storage import load_index
    from .synthetic import Vocabulary

    index_path = o.need("index")
    index = load_index(index_path)
    out = Path(o.need("out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    stats = cluster_stats(index)
    write_histogram_csv(stats.token_majority, out / "majority_token_proportion.csv",
                        label="majority_token_proportion")
    write_histogram_csv(stats.cluster_majority, out / "majority_cluster_proportion.csv",
                        label="majority_cluster_proportion")
    summary = {"clusters": len(stats.cluster_ids), "tokens": len(stats.token_ids),
               "mean_majority_token_proportion": float(stats.token_majority.mean()) if len(stats.cluster_ids) else 0.0,
               "mean_majority_cluster_proportion": float(stats.cluster_majority.mean()) if len(stats.token_ids) else 0.0}
    for text in o.get("query") or []:
        vpath = Path(o.get("vocab") or _vocab_path(index_path))
        vocab = Vocabulary.load(vpath) if vpath.exists() else None
        enc = _encoder(o, dim=index.dim, vocab=vocab)
        print(format_report(text, cluster_report(index, text, enc, int(o.get("nprobe", 2)))))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_run(o: Opts) -> int:
    from .experiment import load_config, run_experiment

    cfg, base = load_config(o.need("config"))
    if o.get("seed") is not None:
        cfg["seed"] = int(o.get("seed"))
    if getattr(o._args, "output_dir", None):
        cfg["output_dir"] = o._args.output_dir
    res = run_experiment(cfg, base)
    print(json.dumps({"output_dir": str(res.output_dir), "runs": sorted(res.runs),
                      "sweep_points": len(res.sweep or [])}))
    return 0


def cmd_sweep(o: Opts) -> int:
    from .experiment import load_config, run_experiment

    cfg, base = load_config(o.need("config"))
    cfg["engines"] = []
    cfg.setdefault("sweep", {})
    if o.get("seed") is not None:
        cfg["seed"] = int(o.get("seed"))
    if getattr(o._args, "output_dir", None):
        cfg["output_dir"] = o._args.output_dir
    res = run_experiment(cfg, base)
    print(json.dumps({"output_dir": str(res.output_dir), "sweep_points": len(res.sweep or [])}))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file whose keys mirror the flags")
    p.add_argument("--seed", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lateint", description="Late-interaction retrieval toolkit")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = _common(sub.add_parser("synth", help="write a seeded synthetic collection"))
    p.add_argument("--n-docs", type=int)
    p.add_argument("--n-queries", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    idx = sub.add_parser("index").add_subparsers(dest="action", required=True)
    p = _common(idx.add_parser("build", help="build a compressed index"))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--embeddings", help="embedding file")
    src.add_argument("--corpus", help="JSONL corpus, encoded synthetically (needs --seed)")
    p.add_argument("--out")
    p.add_argument("--dim", type=int)
    p.add_argument("--context-noise", type=float)
    p.add_argument("--nclusters", type=int)
    p.add_argument("--nbits", type=int)
    p.add_argument("--kmeans-iters", type=int)
    p.add_argument("--sample-cap", type=int)
    p.add_argument("--no-auto-scale", action="store_true", default=None)
    p.set_defaults(func=cmd_index_build)
    p = _common(idx.add_parser("inspect", help="print index statistics"))
    p.add_argument("index", nargs="?")
    p.set_defaults(func=cmd_index_inspect)

    lx = sub.add_parser("lexical").add_subparsers(dest="action", required=True)
    p = _common(lx.add_parser("build", help="build a BM25 index"))
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.set_defaults(func=cmd_lexical_build)

    gr = sub.add_parser("graph").add_subparsers(dest="action", required=True)
    p = _common(gr.add_parser("build", help="build the document proximity graph"))
    p.add_argument("--corpus")
    p.add_argument("--lexical")
    p.add_argument("--out")
    p.add_argument("--K", type=int, dest="K")
    p.set_defaults(func=cmd_graph_build)

    p = _common(sub.add_parser("search", help="retrieve for a query file, write a TREC run"))
    p.add_argument("engine", nargs="?", choices=["plaid", "rerank", "ladr", "exhaustive"])
    p.add_argument("--index")
    p.add_argument("--queries")
    p.add_argument("--query-embeddings")
    p.add_argument("--lexical")
    p.add_argument("--graph")
    p.add_argument("--out")
    p.add_argument("--tag")
    p.add_argument("--k", type=int)
    p.add_argument("--preset", choices=["a", "b", "c"])
    p.add_argument("--nprobe", type=int)
    p.add_argument("--t-cs", type=float)
    p.add_argument("--ndocs", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--k-neighbors", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--context-noise", type=float)
    p.set_defaults(func=cmd_search)

    p = _common(sub.add_parser("eval", help="score a run against qrels"))
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--reference", help="run used as the RBO reference")
    p.add_argument("--measures", nargs="+")
    p.add_argument("--out", help="JSON-lines report")
    p.set_defaults(func=cmd_eval)

    an = sub.add_parser("analyze").add_subparsers(dest="action", required=True)
    p = _common(an.add_parser("clusters", help="majority proportions and per-query cluster reports"))
    p.add_argument("--index")
    p.add_argument("--vocab")
    p.add_argument("--query", action="append")
    p.add_argument("--nprobe", type=int)
    p.add_argument("--context-noise", type=float)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_analyze_clusters)

    for name, fn, text in (("sweep", cmd_sweep, "grid sweep from a config file"),
                           ("run", cmd_run, "full experiment from a config file")):
        p = _common(sub.add_parser(name, help=text))
        p.add_argument("--output-dir")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(Opts(args))
    except (LateIntError, FileNotFoundError) as e:
        print(f"lateint: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
