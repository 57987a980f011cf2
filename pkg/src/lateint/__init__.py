"""Late-interaction retrieval: compressed token indexes, staged search,
lexical first stages, evaluation and benchmarking."""

from .bench import LatencyStats, SweepConfig, SweepPoint, grid_sweep, pareto_frontier, time_queries
from .clusters import ClusterStats, cluster_report, majority_cluster_proportion, majority_token_proportion
from .embedding import (CompressedIndex, IndexConfig, TokenMatrix, build_index, decompress_token,
                        fit_residual_codec, train_codebook)
from .errors import (ConfigError, CorruptIndexError, FormatError, IndexMismatchError, InputError,
                     LateIntError, SweepError)
from .experiment import run_experiment
from .lexical import (LexicalIndex, ProximityGraph, bm25_search_bruteforce, bm25_search_wand,
                      build_lexical_index, build_proximity_graph)
from .metrics import Run, evaluate_run, ndcg_at_k, rbo_ext, read_qrels, read_run, recall_at_k, rr_at_k, write_run
from .plaid import (PRESETS, QueryEmbeddings, RankedList, SearchParams, approx_score, exhaustive_search,
                    generate_candidates, plaid_search, prune_centroids)
from .rerank import LadrParams, RerankParams, ladr_search, rerank
from .storage import load_embeddings, load_index, save_index, write_embeddings
from .synthetic import SyntheticEncoder, make_collection, synthetic_encode

__version__ = "0.1.0"
