"""Exact and approximate kNN search under separable Bregman divergences.

Dimensions are split into partitions; a per-partition upper bound on the
divergence gives a search radius for one ball tree per partition, and the
union of the range results is refined against the full-dimensional points.
"""
from .bbtree import BBTree, Relation, RootFinding, ball_range_relation, build_tree, range_query
from .bench import BenchReport, bench_run, overall_ratio
from .bounds import (PartitionLayout, PTuple, QTriple, p_transform, q_transform, qb_determine,
                     ub_compute)
from .datasets import read_csv, read_fvecs, write_fvecs
from .divergences import (Divergence, DivergenceKind, DomainError, bregman_distance,
                          generator_grad, generator_grad_inverse, generator_value)
from .forest import BBForest, build_forest
from .pagestore import CorruptionError, IoCounter, PageStore, fetch_points, write_point_store
from .persistence import (BadMagicError, IndexFormatError, TruncatedIndexError,
                          VersionMismatchError, deserialize_index, serialize_index)
from .planner import CostParams, fit_cost_params, modeled_cost, optimal_partitions, pccp
from .search import (BrePartitionIndex, ResultItem, SearchConfig, SearchReport,
                     approx_knn_search, build, knn_search, linear_scan_oracle)

__version__ = "0.1.0"
