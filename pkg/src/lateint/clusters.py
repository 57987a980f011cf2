"""How cleanly centroids separate token strings, and vice versa."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embedding import CompressedIndex
from .errors import ConfigError
from .plaid import centroid_scores
from .text import tokenize

HIST_WIDTH = 0.05


@dataclass
class ClusterStats:
    """Co-occurrence summary of (centroid, token id) assignments.

    ``token_majority[i]`` is the share of cluster ``cluster_ids[i]`` held by
    its most frequent token; ``cluster_majority[j]`` is the share of token
    ``token_ids[j]``'s occurrences that land in its most frequent cluster.
    Only non-empty clusters and tokens that occur are listed.
    """

    cluster_ids: np.ndarray
    cluster_sizes: np.ndarray
    token_majority: np.ndarray
    token_ids: np.ndarray
    token_freqs: np.ndarray
    cluster_majority: np.ndarray

    def histogram(self, per: str = "cluster", width: float = HIST_WIDTH):
        values = self.token_majority if per == "cluster" else self.cluster_majority
        return histogram(values, width)


def _require_ids(index: CompressedIndex) -> np.ndarray:
    if index.token_ids is None:
        raise ConfigError("index has no token ids; rebuild it from embeddings that carry token ids")
    return index.token_ids


def _group_max(keys, counts):
    """Per distinct key (``keys`` sorted): (key, sum of counts, max count)."""
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return keys[starts], np.add.reduceat(counts, starts), np.maximum.reduceat(counts, starts)


def cluster_stats(index: CompressedIndex) -> ClusterStats:
    tids = _require_ids(index).astype(np.int64)
    cids = index.centroid_ids.astype(np.int64)
    if len(tids) == 0:
        e = np.zeros(0, np.int64)
        return ClusterStats(e, e, np.zeros(0), e, e, np.zeros(0))
    pairs, counts = np.unique(np.stack([cids, tids], axis=1), axis=0, return_counts=True)
    c_ids, c_sizes, c_max = _group_max(pairs[:, 0], counts)
    order = np.lexsort((pairs[:, 0], pairs[:, 1]))
    t_ids, t_freqs, t_max = _group_max(pairs[order, 1], counts[order])
    return ClusterStats(c_ids, c_sizes, c_max / c_sizes, t_ids, t_freqs, t_max / t_freqs)


def histogram(values, width: float = HIST_WIDTH) -> tuple[np.ndarray, np.ndarray]:
    """Counts over bins ``[0, w), [w, 2w), ... , [1-w, 1]``."""
    nbins = int(round(1.0 / width))
    edges = np.linspace(0.0, 1.0, nbins + 1)
    # proportions are ratios of small ints; round to keep 0.75 off the 0.7 bin
    idx = np.floor(np.round(np.asarray(values, dtype=np.float64) / width, 9)).astype(np.int64)
    counts = np.bincount(np.clip(idx, 0, nbins - 1), minlength=nbins)
    return edges, counts


def write_histogram_csv(values, path, width: float = HIST_WIDTH, label: str = "proportion") -> None:
    edges, counts = histogram(values, width)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow([f"{label}_lo", f"{label}_hi", "count", "bin_width"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", int(c), width])


def majority_token_proportion(index: CompressedIndex, csv_path=None) -> ClusterStats:
    stats = cluster_stats(index)
    if csv_path is not None:
        write_histogram_csv(stats.token_majority, csv_path, label="majority_token_proportion")
    return stats


def majority_cluster_proportion(index: CompressedIndex, csv_path=None) -> ClusterStats:
    stats = cluster_stats(index)
    if csv_path is not None:
        write_histogram_csv(stats.cluster_majority, csv_path, label="majority_cluster_proportion")
    return stats


def cluster_report(index: CompressedIndex, query_text: str, encoder, nprobe: int = 2, top: int = 10) -> list[dict]:
    """Top tokens of each centroid probed by ``query_text``.

    Entries follow the order in which query tokens probe centroids. Token
    labels come from ``encoder.vocab``; unknown ids print as ``#id``.
    """
    tids = _require_ids(index)
    if nprobe < 1:
        raise ConfigError("nprobe must be >= 1")
    q = encoder.encode_query("report", query_text)
    if len(q.vectors) == 0:
        return []
    S = centroid_scores(q, index)
    probed: dict[int, list[int]] = {}
    for i, row in enumerate(np.argsort(-S, axis=1, kind="stable")[:, :nprobe]):
        for c in row:
            probed.setdefault(int(c), []).append(i)
    qtoks = tokenize(query_text)
    vocab = getattr(encoder, "vocab", None)
    report = []
    for c, qi in probed.items():
        members = tids[index.centroid_ids == c]
        size = len(members)
        entry = {"cluster": c, "size": size, "query_tokens": [qtoks[i] for i in qi], "top_tokens": []}
        if size:
            ids, cnt = np.unique(members, return_counts=True)
            order = np.lexsort((ids, -cnt))[:top]
            for j in order:
                tid = int(ids[j])
                label = vocab.token(tid) if vocab is not None and tid < len(vocab) else f"#{tid}"
                entry["top_tokens"].append((label, 100.0 * cnt[j] / size))
        report.append(entry)
    return report


def format_report(query_text: str, report: list[dict]) -> str:
    lines = [f"query: {query_text}"]
    for e in report:
        toks = ", ".join(f"{t} {p:.1f}%" for t, p in e["top_tokens"])
        lines.append(f"  cluster {e['cluster']} (size {e['size']}, via {' '.join(e['query_tokens'])}): {toks}")
    return "\n".join(lines)
