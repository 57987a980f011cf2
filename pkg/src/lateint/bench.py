"""Latency measurement, parameter sweeps and Pareto frontiers."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, SweepError
from .metrics import DEFAULT_MEASURES, Measure, Run, evaluate_run
from .plaid import SearchParams, exhaustive_search, plaid_search
from .rerank import LadrParams, RerankParams, ladr_search, rerank

logger = logging.getLogger(__name__)

# grids used for the full parameter study
PLAID_GRID = {"nprobe": [1, 2, 4, 8], "t_cs": [0.3, 0.4, 0.45, 0.5, 0.6], "ndocs": [256, 1024, 4096, 8192]}
RERANK_GRID = {"n": [200, 500, 1000, 2000, 5000, 10000]}
LADR_GRID = {"n0": [100, 500, 1000], "k_neighbors": [64, 128], "c": [10, 20, 50]}

PARAM_COLUMNS = ("nprobe", "t_cs", "ndocs", "n", "n0", "k_neighbors", "c", "k")


@dataclass
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    std_ms: float
    n_queries: int
    repeats: int
    pass_means_ms: list[float]
    outputs: list = field(default_factory=list, repr=False)


def time_queries(engine: Callable, queries: Sequence, warmup: int = 3, repeats: int = 1) -> LatencyStats:
    """Wall-clock ms per query, single-threaded.

    The first ``warmup`` queries are run once untimed and left out of the
    statistics. Only the ``engine(query)`` call sits inside the timer.
    ``outputs`` holds the engine's return value for every query (last pass).
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    queries = list(queries)
    if warmup < 0:
        raise ConfigError("warmup must be >= 0")
    timed = queries[warmup:]
    if not timed:
        raise ConfigError(f"no queries left to time after {warmup} warmup queries")
    outputs = [None] * len(queries)
    samples = np.empty((repeats, len(timed)))
    clock = time.perf_counter
    with threadpool_limits(limits=1):
        for i in range(min(warmup, len(queries))):
            outputs[i] = engine(queries[i])
        for r in range(repeats):
            for j, q in enumerate(timed):
                t0 = clock()
                out = engine(q)
                samples[r, j] = clock() - t0
                outputs[warmup + j] = out
    ms = samples * 1000.0
    per_query = ms.mean(axis=0)
    return LatencyStats(
        mean_ms=float(ms.mean()),
        p50_ms=float(np.percentile(per_query, 50)),
        p95_ms=float(np.percentile(per_query, 95)),
        std_ms=float(ms.mean(axis=1).std()) if repeats > 1 else float(per_query.std()),
        n_queries=len(timed),
        repeats=repeats,
        pass_means_ms=ms.mean(axis=1).tolist(),
        outputs=outputs,
    )


@dataclass
class SweepPoint:
    engine: str
    params: dict
    ms_q: float
    measures: dict[str, float]

    def row(self, measure_names) -> dict:
        out = {"engine": self.engine}
        for c in PARAM_COLUMNS:
            out[c] = self.params.get(c, "")
        out["ms_q"] = round(self.ms_q, 4)
        for m in measure_names:
            out[m] = round(self.measures.get(m, float("nan")), 6)
        return out


@dataclass
class SweepConfig:
    """Which engines to sweep and over which values.

    A grid set to ``None`` skips that engine.
    """

    plaid: dict | None = field(default_factory=lambda: dict(PLAID_GRID))
    rerank: dict | None = field(default_factory=lambda: dict(RERANK_GRID))
    ladr: dict | None = field(default_factory=lambda: dict(LADR_GRID))
    exhaustive: bool = True
    k: int = 1000
    measures: tuple = DEFAULT_MEASURES
    warmup: int = 3
    repeats: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown sweep keys: {sorted(extra)}")
        d = dict(d)
        if "measures" in d:
            d["measures"] = tuple(d["measures"])
        return cls(**d)


def _grid(spec: dict) -> list[dict]:
    keys = list(spec)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(spec[k] for k in keys))]


def make_engine(engine: str, params: dict, *, index, lexical=None, graph=None) -> Callable:
    if engine == "plaid":
        sp = SearchParams(**params)
        return lambda q: plaid_search(q, index, sp)
    if engine == "exhaustive":
        k = params.get("k", 1000)
        return lambda q: exhaustive_search(q, index, k)
    if engine == "rerank":
        if lexical is None:
            raise ConfigError("rerank needs a lexical index")
        rp = RerankParams(**params)
        return lambda q: rerank(q, rp, lexical, index)
    if engine == "ladr":
        if lexical is None or graph is None:
            raise ConfigError("ladr needs a lexical index and a proximity graph")
        lp = LadrParams(**params)
        return lambda q: ladr_search(q, lp, lexical, graph, index)
    raise ConfigError(f"unknown engine {engine!r}")


def sweep_points(config: SweepConfig) -> list[tuple[str, dict]]:
    pts = []
    if config.exhaustive:
        pts.append(("exhaustive", {"k": config.k}))
    for name in ("plaid", "rerank", "ladr"):
        grid = getattr(config, name)
        if grid:
            pts.extend((name, {**p, "k": config.k}) for p in _grid(grid))
    return pts


def run_point(engine, params, queries, qrels, reference, config: SweepConfig, **ctx) -> tuple[SweepPoint, Run]:
    fn = make_engine(engine, params, **ctx)
    stats = time_queries(fn, queries, warmup=min(config.warmup, len(queries) - 1), repeats=config.repeats)
    run = Run(tag=engine)
    for ranked in stats.outputs:
        run.add(ranked)
    report = evaluate_run(run, qrels, config.measures, reference)
    return SweepPoint(engine, dict(params), stats.mean_ms, report.mean), run


def grid_sweep(config: SweepConfig, *, index, queries, qrels, lexical=None, graph=None,
               reference: Run | None = None, csv_path=None) -> list[SweepPoint]:
    """Evaluate every grid point of every enabled engine.

    RBO is measured against ``reference`` (an exhaustive run at depth ``k``
    is computed when none is given).
    """
    queries = list(queries)
    if not queries:
        raise ConfigError("sweep needs at least one query")
    if reference is None:
        reference = Run({q.query_id: exhaustive_search(q, index, config.k) for q in queries}, tag="exhaustive")
    points = []
    for engine, params in sweep_points(config):
        try:
            pt, _ = run_point(engine, params, queries, qrels, reference, config,
                              index=index, lexical=lexical, graph=graph)
        except Exception as e:
            raise SweepError(f"sweep point {engine} {params} failed: {e}", {"engine": engine, **params}) from e
        logger.info("%s %s: %.2f ms/q %s", engine, params, pt.ms_q, pt.measures)
        points.append(pt)
    if csv_path is not None:
        write_sweep_csv(points, csv_path, config.measures)
    return points


def write_sweep_csv(points, path, measures=DEFAULT_MEASURES) -> None:
    names = [Measure.parse(m).name if not isinstance(m, Measure) else m.name for m in measures]
    cols = ["engine", *PARAM_COLUMNS, "ms_q", *names]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=cols, lineterminator="\r\n")
        w.writeheader()
        for p in points:
            w.writerow(p.row(names))


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# Pareto frontier
# ---------------------------------------------------------------------------

def pareto_mask(latency, value) -> np.ndarray:
    """Boolean mask of points not dominated under (min latency, max value).

    A point is dominated when another has latency <= and value >= with at
    least one strict inequality; exact duplicates are all kept.
    """
    lat = np.asarray(latency, dtype=np.float64)
    val = np.asarray(value, dtype=np.float64)
    keep = np.zeros(len(lat), dtype=bool)
    order = np.lexsort((-val, lat))
    best = -np.inf
    best_lat = np.nan
    for i in order:
        if val[i] > best:
            keep[i] = True
            best, best_lat = val[i], lat[i]
        elif val[i] == best and lat[i] == best_lat:
            keep[i] = True
    return keep


def pareto_frontier(points: Sequence[SweepPoint], measure: str) -> list[SweepPoint]:
    if not points:
        raise ConfigError("pareto_frontier needs at least one point")
    lat = [p.ms_q for p in points]
    val = [p.measures[measure] for p in points]
    keep = pareto_mask(lat, val)
    idx = [i for i in np.lexsort((-np.asarray(val), np.asarray(lat))) if keep[i]]
    return [points[i] for i in idx]
