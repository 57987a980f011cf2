"""Ranking measures and TREC qrels/run interchange.

Conventions follow trec_eval: linear gain for nDCG, ideal DCG over all
judged documents cut at the same depth, recall thresholds on the grade.
"""

from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import FormatError
from .plaid import RankedList

logger = logging.getLogger(__name__)

Qrels = dict  # query_id -> {doc_id: grade}

RBO_VARIANT = "rbo_ext, both rankings truncated to the shorter length"


@dataclass
class Run:
    runs: dict[str, RankedList] = field(default_factory=dict)
    tag: str = "lateint"

    def __getitem__(self, qid):
        return self.runs[qid]

    def __iter__(self):
        return iter(self.runs)

    def __len__(self):
        return len(self.runs)

    def add(self, ranked: RankedList) -> None:
        self.runs[ranked.query_id] = ranked


def _docs(ranked) -> list[str]:
    if isinstance(ranked, RankedList):
        return ranked.doc_ids
    return list(ranked)


def rr_at_k(ranked, judged: Mapping[str, int] | None, k: int = 10, min_rel: int = 1) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not judged:
        logger.debug("rr_at_k: query has no judgments, scoring 0")
        return 0.0
    for i, d in enumerate(_docs(ranked)[:k], 1):
        if judged.get(d, 0) >= min_rel:
            return 1.0 / i
    return 0.0


def ndcg_at_k(ranked, judged: Mapping[str, int] | None, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not judged:
        return 0.0
    dcg = sum(judged.get(d, 0) / math.log2(i + 1) for i, d in enumerate(_docs(ranked)[:k], 1))
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, 1))
    return dcg / idcg if idcg > 0 else 0.0


def recall_at_k(ranked, judged: Mapping[str, int] | None, k: int, min_rel: int = 1) -> float | None:
    """Fraction of docs graded ``>= min_rel`` found in the top ``k``.

    Returns ``None`` when the query has no such docs; callers skip it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = {d for d, g in (judged or {}).items() if g >= min_rel}
    if not rel:
        return None
    return len(rel.intersection(_docs(ranked)[:k])) / len(rel)


def rbo_ext(S: Sequence, T: Sequence, p: float = 0.99) -> float:
    """Extrapolated rank-biased overlap of two rankings.

    Both rankings are cut to ``d = min(len(S), len(T))``. Computed as one
    minus the weighted disagreement so identical prefixes give exactly 1.0.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    S, T = _docs(S), _docs(T)
    d = min(len(S), len(T))
    if d == 0:
        raise ValueError("rbo_ext is undefined for an empty ranking")
    seen_s, seen_t = set(), set()
    overlap = 0
    deficit = []
    w = 1.0 - p
    for i in range(d):
        a, b = S[i], T[i]
        if a == b:
            overlap += 1
        else:
            overlap += (a in seen_t) + (b in seen_s)
            seen_s.add(a)
            seen_t.add(b)
        miss = 1.0 - overlap / (i + 1)
        if miss:
            deficit.append(w * miss)
        w *= p
    if overlap == 0:
        return 0.0
    miss_d = 1.0 - overlap / d
    if miss_d:
        deficit.append(miss_d * p ** d)
    return 1.0 - math.fsum(deficit)


# ---------------------------------------------------------------------------
# measure specs
# ---------------------------------------------------------------------------

_MEASURE = re.compile(r"^(rr|ndcg|r|recall|rbo)(?:@(\d+)(k?))?(?::(\d+(?:\.\d+)?))?$")


@dataclass(frozen=True)
class Measure:
    """Parsed measure name such as ``rr@10``, ``ndcg@1k``, ``r@1k:2`` or ``rbo:0.99``.

    The number after ``:`` is the minimum grade for rr/recall and the
    persistence for rbo.
    """

    name: str
    kind: str
    k: int | None
    param: float | None

    @classmethod
    def parse(cls, spec: str) -> "Measure":
        m = _MEASURE.match(spec.strip().lower())
        if not m:
            raise ValueError(f"unknown measure {spec!r}")
        kind, k, kilo, param = m.groups()
        kind = "r" if kind == "recall" else kind
        depth = int(k) * (1000 if kilo else 1) if k else None
        if kind != "rbo" and depth is None:
            raise ValueError(f"measure {spec!r} needs a depth, e.g. {kind}@10")
        return cls(spec, kind, depth, float(param) if param else None)

    def __call__(self, ranked, judged, reference=None):
        if self.kind == "rr":
            return rr_at_k(ranked, judged, self.k, int(self.param or 1))
        if self.kind == "ndcg":
            return ndcg_at_k(ranked, judged, self.k)
        if self.kind == "r":
            return recall_at_k(ranked, judged, self.k, int(self.param or 1))
        if reference is None:
            raise ValueError("rbo needs a reference ranking")
        S, T = _docs(ranked), _docs(reference)
        if self.k:
            S, T = S[:self.k], T[:self.k]
        if not S or not T:
            return 0.0
        return rbo_ext(S, T, self.param or 0.99)


DEFAULT_MEASURES = ("rr@10", "ndcg@10", "ndcg@1k", "r@1k", "rbo")


@dataclass
class EvalReport:
    per_query: dict[str, dict[str, float]]
    mean: dict[str, float]
    counts: dict[str, int]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for qid, vals in self.per_query.items():
                f.write(json.dumps({"query_id": qid, **vals}) + "\n")
            f.write(json.dumps({"query_id": "mean", **self.mean, "n_queries": self.counts,
                                "rbo_variant": RBO_VARIANT}) + "\n")


def evaluate_run(run: Run, qrels: Qrels, measures=DEFAULT_MEASURES, reference: Run | None = None,
                 ) -> EvalReport:
    """Per-query values and means.

    Only queries that appear in both the run and the qrels are evaluated;
    recall skips queries with no doc above its grade threshold. RBO compares
    each ranking with ``reference`` and does not need judgments.
    """
    ms = [m if isinstance(m, Measure) else Measure.parse(m) for m in measures]
    per_query: dict[str, dict[str, float]] = {}
    sums = {m.name: 0.0 for m in ms}
    counts = {m.name: 0 for m in ms}
    skipped = 0
    for qid, ranked in run.runs.items():
        judged = qrels.get(qid)
        vals = {}
        for m in ms:
            if m.kind == "rbo":
                if reference is None or qid not in reference.runs:
                    continue
                v = m(ranked, judged, reference.runs[qid])
            else:
                if not judged:
                    continue
                v = m(ranked, judged)
            if v is None:
                continue
            vals[m.name] = v
            sums[m.name] += v
            counts[m.name] += 1
        if not judged:
            skipped += 1
        if vals:
            per_query[qid] = vals
    if skipped:
        logger.info("evaluate_run: %d run queries have no judgments", skipped)
    mean = {name: (sums[name] / counts[name] if counts[name] else 0.0) for name in sums}
    return EvalReport(per_query, mean, counts)


# ---------------------------------------------------------------------------
# TREC files
# ---------------------------------------------------------------------------

def read_qrels(path) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 'qid iter docid grade'")
            qid, _, did, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise FormatError(f"{path}:{lineno}: negative grade")
            judged = qrels.setdefault(qid, {})
            if did in judged:
                warnings.warn(f"{path}:{lineno}: duplicate judgment for ({qid}, {did}); last one wins",
                              stacklevel=2)
            judged[did] = g
    return qrels


def read_run(path) -> Run:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    tag = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, did, rank, score, tag = parts
            try:
                rows.setdefault(qid, []).append((int(rank), did, float(score)))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
    run = Run(tag=tag or "lateint")
    for qid, entries in rows.items():
        entries.sort()
        if len({d for _, d, _ in entries}) != len(entries):
            raise FormatError(f"{path}: duplicate doc for query {qid}")
        run.add(RankedList(qid, [(d, s) for _, d, s in entries]))
    return run


def write_run(run: Run, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for qid, ranked in run.runs.items():
            for rank, (did, score) in enumerate(ranked.entries, 1):
                f.write(f"{qid} Q0 {did} {rank} {score:.6f} {run.tag}\n")
