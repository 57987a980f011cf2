"""End-to-end driver: collection -> indexes -> runs, reports, sweeps, analyses.

The config is one JSON-compatible dict::

    {
      "seed": 7,
      "output_dir": "out",
      "collection": {"synthetic": {"n_docs": 500, "n_queries": 50}},
      "embeddings": {"source": "synthetic", "dim": 64},
      "index": {"nclusters": 256, "nbits": 4},
      "engines": [{"engine": "exhaustive"}, {"engine": "plaid", "preset": "b"}],
      "k": 1000
    }

A file-backed collection uses ``{"corpus": ..., "queries": ..., "qrels": ...}``
and file embeddings use ``{"source": "file", "docs": ..., "queries": ...}``.
Optional sections: ``lexical`` (k1, b), ``graph`` (K), ``measures``,
``sweep`` (see :class:`~lateint.bench.SweepConfig`) and ``analysis``
(``clusters``, ``report_queries``, ``nprobe``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from .bench import SweepConfig, grid_sweep, make_engine, pareto_frontier, write_sweep_csv
from .clusters import cluster_report, cluster_stats, format_report, write_histogram_csv
from .embedding import IndexConfig, build_index
from .errors import ConfigError
from .lexical import build_lexical_index, build_proximity_graph, read_corpus, read_queries
from .metrics import DEFAULT_MEASURES, Run, evaluate_run, read_qrels, write_run
from .plaid import PRESETS, QueryEmbeddings, SearchParams, exhaustive_search
from .storage import load_embeddings
from .synthetic import SyntheticEncoder, make_collection

logger = logging.getLogger(__name__)

TOP_KEYS = {"seed", "output_dir", "collection", "embeddings", "index", "lexical", "graph",
            "engines", "k", "measures", "sweep", "analysis"}


@dataclass
class ExperimentResult:
    output_dir: Path
    runs: dict[str, Run] = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    sweep: list | None = None


def _resolve(base: Path | None, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"config {where} is missing {key!r}")
    return d[key]


def engine_label(spec: dict) -> str:
    if "label" in spec:
        return str(spec["label"])
    name = spec["engine"]
    if "preset" in spec:
        return f"{name}-{spec['preset']}"
    parts = [f"{k}{v}" for k, v in sorted(spec.items()) if k not in ("engine", "k")]
    return "-".join([name, *parts])


def engine_params(spec: dict, k: int) -> dict:
    spec = dict(spec)
    name = spec.pop("engine")
    spec.pop("label", None)
    if "preset" in spec:
        if name != "plaid":
            raise ConfigError("presets only apply to the plaid engine")
        preset = spec.pop("preset")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]
        spec = {"nprobe": base.nprobe, "t_cs": base.t_cs, "ndocs": base.ndocs, **spec}
    spec.setdefault("k", k)
    return spec


def _load_collection(cfg: dict, base):
    coll = _need(cfg, "collection", "")
    if "synthetic" in coll:
        seed = cfg.get("seed")
        if seed is None:
            raise ConfigError("synthetic collections need a 'seed'")
        c = make_collection(seed=seed, **coll["synthetic"])
        return c.docs, c.queries, c.qrels
    docs = read_corpus(_resolve(base, _need(coll, "corpus", "collection")))
    queries = read_queries(_resolve(base, _need(coll, "queries", "collection")))
    qrels = read_qrels(_resolve(base, coll["qrels"])) if "qrels" in coll else {}
    return docs, queries, qrels


def _embed(cfg: dict, base, docs, queries):
    emb = dict(cfg.get("embeddings", {"source": "synthetic"}))
    source = emb.pop("source", "synthetic")
    if source == "synthetic":
        seed = cfg.get("seed")
        if seed is None:
            raise ConfigError("synthetic embeddings need a 'seed'")
        enc = SyntheticEncoder(dim=emb.get("dim", 64), seed=seed, context_noise=emb.get("context_noise", 0.0))
        dmats = [enc.encode(d["text"], d["doc_id"]) for d in docs]
        qembs = [enc.encode_query(q["query_id"], q["text"]) for q in queries]
        return dmats, qembs, enc
    if source != "file":
        raise ConfigError(f"embeddings source must be 'synthetic' or 'file', not {source!r}")
    dmats = load_embeddings(_resolve(base, _need(emb, "docs", "embeddings")))
    qmats = {m.doc_id: m for m in load_embeddings(_resolve(base, _need(emb, "queries", "embeddings")))}
    qembs = []
    for q in queries:
        m = qmats.get(q["query_id"])
        if m is None:
            raise ConfigError(f"query {q['query_id']!r} has no embedding in the query embeddings file")
        qembs.append(QueryEmbeddings(q["query_id"], m.vectors, text=q["text"]))
    return dmats, qembs, None


def _index_config(cfg: dict, dim: int) -> IndexConfig:
    ic = dict(cfg.get("index", {}))
    allowed = {f.name for f in fields(IndexConfig)}
    bad = set(ic) - allowed
    if bad:
        raise ConfigError(f"unknown index keys: {sorted(bad)}")
    ic.setdefault("seed", cfg.get("seed", 0))
    ic["dim"] = dim
    return IndexConfig(**ic)


def run_experiment(config: dict, base_dir=None) -> ExperimentResult:
    """Build everything the config asks for and write the artifact tree.

    Relative paths resolve against ``base_dir``. Outputs land in
    ``runs/``, ``reports/``, ``sweeps/`` and ``analysis/`` under
    ``output_dir``.
    """
    bad = set(config) - TOP_KEYS
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    base = Path(base_dir) if base_dir is not None else None
    out = _resolve(base, _need(config, "output_dir", ""))
    for sub in ("runs", "reports", "sweeps", "analysis"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    k = int(config.get("k", 1000))
    measures = tuple(config.get("measures", DEFAULT_MEASURES))
    engines = config.get("engines", [])
    if not engines and "sweep" not in config:
        raise ConfigError("config lists no engines and no sweep")
    for spec in engines:
        if "engine" not in spec:
            raise ConfigError(f"engine entry {spec} has no 'engine' key")

    docs, queries, qrels = _load_collection(config, base)
    if not docs or not queries:
        raise ConfigError("collection has no documents or no queries")
    dmats, qembs, encoder = _embed(config, base, docs, queries)
    dim = next((m.dim for m in dmats if len(m)), None)
    if dim is None:
        raise ConfigError("no document produced any token embedding")
    index = build_index(dmats, _index_config(config, dim))
    logger.info("index: %d docs, %d tokens, %d clusters", index.n_docs, index.n_tokens, index.nclusters)

    sweep_cfg = SweepConfig.from_dict({"measures": measures, "k": k, **config["sweep"]}) if "sweep" in config else None
    kinds = {s["engine"] for s in engines}
    if sweep_cfg is not None:
        kinds |= {n for n in ("rerank", "ladr") if getattr(sweep_cfg, n)}
    lexical = graph = None
    if kinds & {"rerank", "ladr"}:
        lx = config.get("lexical", {})
        texts = [d["text"] for d in docs]
        lexical = build_lexical_index(texts, [d["doc_id"] for d in docs], **lx)
        if "ladr" in kinds:
            graph = build_proximity_graph(lexical, texts, int(config.get("graph", {}).get("K", 128)))

    reference = Run({q.query_id: exhaustive_search(q, index, k) for q in qembs}, tag="exhaustive")
    result = ExperimentResult(out)
    for spec in engines:
        label = engine_label(spec)
        if label in result.runs:
            raise ConfigError(f"duplicate engine label {label!r}")
        if spec["engine"] == "exhaustive":
            run = Run(dict(reference.runs), tag=label)
        else:
            fn = make_engine(spec["engine"], engine_params(spec, k), index=index, lexical=lexical, graph=graph)
            run = Run({q.query_id: fn(q) for q in qembs}, tag=label)
        write_run(run, out / "runs" / f"{label}.run")
        report = evaluate_run(run, qrels, measures, reference)
        report.write_jsonl(out / "reports" / f"{label}.jsonl")
        result.runs[label] = run
        result.reports[label] = report

    if sweep_cfg is not None:
        points = grid_sweep(sweep_cfg, index=index, queries=qembs, qrels=qrels, lexical=lexical,
                            graph=graph, reference=reference, csv_path=out / "sweeps" / "sweep.csv")
        result.sweep = points
        for m in ("rr@10", "ndcg@10", "rbo"):
            if m in measures:
                write_sweep_csv(pareto_frontier(points, m), out / "sweeps" / f"pareto_{m.replace('@', '')}.csv",
                                measures)

    an = config.get("analysis", {})
    if an.get("clusters") and index.token_ids is not None:
        stats = cluster_stats(index)
        write_histogram_csv(stats.token_majority, out / "analysis" / "majority_token_proportion.csv",
                            label="majority_token_proportion")
        write_histogram_csv(stats.cluster_majority, out / "analysis" / "majority_cluster_proportion.csv",
                            label="majority_cluster_proportion")
        if encoder is not None:
            n = int(an.get("report_queries", 3))
            text = "\n\n".join(format_report(q["text"], cluster_report(index, q["text"], encoder, an.get("nprobe", 2)))
                               for q in queries[:n])
            (out / "analysis" / "cluster_report.txt").write_text(text + "\n", encoding="utf-8")
    return result


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg, path.parent
