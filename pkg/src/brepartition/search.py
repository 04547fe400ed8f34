"""Index construction and exact / probability-guaranteed approximate kNN search."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .bbtree import DEFAULT_LEAF_CAPACITY, RootFinding
from .bounds import BoundVector, PartitionLayout, kth_smallest, p_table, q_table, ub_table
from .divergences import Divergence, LinearDistances
from .forest import BBForest, build_forest
from .pagestore import DEFAULT_PAGE_SIZE, IoCounter, fetch_points
from .planner import CostParams, fit_cost_params, optimal_partitions, pccp

log = logging.getLogger(__name__)

C_FLOOR = 0.05
# Range radii are inflated by this relative amount so float rounding in the
# bound arithmetic can never drop a true neighbour.
RADIUS_SLACK = 1e-9
HIST_BINS = 64


class ResultItem(NamedTuple):
    record_id: int
    distance: float


@dataclass
class SearchReport:
    k: int
    candidates: int = 0
    pages_read: int = 0
    elapsed_us: float = 0.0
    per_tree: list = field(default_factory=list)
    bound: BoundVector | None = None
    coefficient: float = 1.0
    bound_scale: float = 1.0
    shortfall: bool = False
    candidate_ids: np.ndarray | None = None


@dataclass
class SearchConfig:
    divergence: Divergence
    partitions: int | str = "auto"
    pccp: bool = True
    leaf_capacity: int = DEFAULT_LEAF_CAPACITY
    page_size: int = DEFAULT_PAGE_SIZE
    seed: int = 0
    approx_p: float | None = None
    fit_samples: int = 50
    workers: int = 1
    root: RootFinding = RootFinding()

    def __post_init__(self):
        if self.approx_p is not None and not 0 < self.approx_p <= 1:
            raise ValueError("approx_p must lie in (0, 1]")
        if self.partitions != "auto" and int(self.partitions) < 1:
            raise ValueError("partitions must be 'auto' or a positive integer")


@dataclass
class DimStats:
    mean: np.ndarray
    var: np.ndarray
    hist_counts: np.ndarray | None = None
    hist_edges: np.ndarray | None = None


def fit_dimension_stats(dataset, bins: int | None = HIST_BINS) -> DimStats:
    X = np.asarray(dataset, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least two records")
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1)
    counts = edges = None
    if bins:
        counts = np.empty((X.shape[1], bins), dtype=np.int64)
        edges = np.empty((X.shape[1], bins + 1))
        for j in range(X.shape[1]):
            counts[j], edges[j] = np.histogram(X[:, j], bins=bins)
    return DimStats(mean, var, counts, edges)


def approx_coefficient(stats: DimStats, grad_y, kappa: float, mu: float, p: float,
                       floor: float = C_FLOOR) -> float:
    """Coefficient c in (0, 1] shrinking the search bound for probability p.

    The cross term -sum x_i g_i is modelled as Normal with independent
    dimensions; c solves Psi(c mu) = p Psi(mu) + (1 - p) Psi(-kappa).
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if p == 1 or not mu > 0:
        return 1.0
    g = np.asarray(grad_y, dtype=np.float64)
    loc = float(-(stats.mean * g).sum())
    scale = float(np.sqrt((stats.var * g * g).sum()))
    if not scale > 0:
        return 1.0
    blend = p * norm.cdf(mu, loc, scale) + (1 - p) * norm.cdf(-kappa, loc, scale)
    c = norm.ppf(blend, loc, scale) / mu
    if not np.isfinite(c):
        c = 1.0 if c > 0 or np.isnan(c) else floor
    return float(min(1.0, max(floor, c)))


def approx_bound_scale(kappa: float, mu: float, c: float) -> float:
    """Factor taking the exact bound kappa + mu to kappa + c mu.

    Only the relaxed cross term is tightened; every per-subspace bound is
    multiplied by this same factor so their sum is the tightened total.
    """
    total = kappa + mu
    if not total > 0 or c >= 1:
        return 1.0
    return float(min(1.0, max(0.0, (kappa + c * mu) / total)))


class BrePartitionIndex:
    """In-memory view of a built (or loaded) index."""

    def __init__(self, div: Divergence, layout: PartitionLayout, transforms: np.ndarray,
                 forest: BBForest, stats: DimStats, params: CostParams | None,
                 config: SearchConfig):
        self.div = div
        self.layout = layout
        self.transforms = transforms
        self.forest = forest
        self.stats = stats
        self.params = params
        self.config = config
        X = forest.store.all_points()
        fx = div.f(X, div.weights_for())
        self._f_sum = fx.sum(axis=1)
        self._f_abs = np.abs(fx).sum(axis=1)
        self._x_l1 = np.abs(X).sum(axis=1)

    @property
    def n(self) -> int:
        return self.transforms.shape[0]

    @property
    def d(self) -> int:
        return self.layout.d

    @property
    def M(self) -> int:
        return self.layout.M

    @property
    def store(self):
        return self.forest.store

    def points(self) -> np.ndarray:
        return self.store.all_points()

    def knn(self, y, k: int):
        return knn_search(self, y, k)

    def approx_knn(self, y, k: int, p: float):
        return approx_knn_search(self, y, k, p)


def as_storage(dataset) -> np.ndarray:
    """Round to the float32 storage precision, returned as float64."""
    return np.asarray(dataset, dtype=np.float32).astype(np.float64)


def build(dataset, config: SearchConfig) -> BrePartitionIndex:
    X = as_storage(dataset)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("dataset must be a non-empty n x d matrix")
    div = config.divergence
    X = div.validate(X, "dataset")
    n, d = X.shape
    params = None
    if config.partitions == "auto":
        if n >= 2:
            params = fit_cost_params(X, div, config.fit_samples, config.seed)
            M = optimal_partitions(params)
        else:
            M = 1
        log.info("planner chose M=%d", M)
    else:
        M = int(config.partitions)
        if M > d:
            raise ValueError(f"partitions={M} exceeds d={d}")
    layout = pccp(X, M, config.seed) if config.pccp and n >= 2 else PartitionLayout.contiguous(d, M)
    transforms = p_table(X, layout, div)
    forest = build_forest(X, layout, div, config.leaf_capacity, config.seed, config.page_size,
                          workers=config.workers)
    stats = fit_dimension_stats(X) if n >= 2 else DimStats(X[0].copy(), np.zeros(d))
    return BrePartitionIndex(div, layout, transforms, forest, stats, params, config)


def _rank(ids: np.ndarray, dist: np.ndarray, k: int) -> list[ResultItem]:
    order = np.lexsort((ids, dist))[:k]
    return [ResultItem(int(ids[i]), float(dist[i])) for i in order]


def _search(index: BrePartitionIndex, y, k: int, p: float | None):
    t0 = time.perf_counter()
    if not 1 <= k <= index.n:
        raise ValueError(f"k must lie in [1, {index.n}], got {k}")
    div = index.div
    y = div.validate(y, "query")
    if y.shape != (index.d,):
        raise ValueError(f"query has {y.size} coordinates, index expects {index.d}")
    layout = index.layout
    Q = q_table(y, layout, div)
    ubs = ub_table(index.transforms, Q)
    totals = ubs.sum(axis=1)
    t = kth_smallest(totals, k)
    bound = BoundVector(ubs[t].copy(), float(totals[t]), t)
    report = SearchReport(k=k, bound=bound)
    radii = bound.per_subspace
    if p is not None and p < 1:
        P_t = index.transforms[t]
        kappa = float(P_t[:, 0].sum() + Q[:, 0].sum() + Q[:, 1].sum())
        mu = float(np.sqrt(P_t[:, 1].sum() * Q[:, 2].sum()))
        grad_y = div.grad(y, div.weights_for())
        report.coefficient = approx_coefficient(index.stats, grad_y, kappa, mu, p)
        report.bound_scale = approx_bound_scale(kappa, mu, report.coefficient)
        radii = radii * report.bound_scale
    radii = radii * (1 + RADIUS_SLACK)
    y_parts = layout.split(y)
    hits = index.forest.range_queries(y_parts, radii, index.config.root)
    mask = np.zeros(index.n, dtype=bool)
    for h in hits:
        mask[h] = True
    cand = np.flatnonzero(mask)
    if cand.size < k:
        # shortfall: fall back to the unscaled bound
        log.debug("approximate bound kept %d < k=%d candidates; using exact bound", cand.size, k)
        items, rep = _search(index, y, k, None)
        rep.shortfall = True
        rep.coefficient = report.coefficient
        rep.bound_scale = report.bound_scale
        rep.elapsed_us = (time.perf_counter() - t0) * 1e6
        return items, rep
    counter = IoCounter()
    pts = fetch_points(index.store, index.store.addresses(cand), counter)
    # rank on the fast linear form, then recompute exactly every row that
    # could still belong to the k best
    lin = LinearDistances(div, pts, index._f_sum[cand], index._f_abs[cand], div.weights_for(),
                          index._x_l1[cand])
    fast, err = lin.bounds(y)
    kth = np.partition(fast + err, k - 1)[k - 1]
    sel = np.flatnonzero(fast - err <= kth)
    items = _rank(cand[sel], lin.exact(y, sel), k)
    report.candidates = int(cand.size)
    report.candidate_ids = cand
    report.per_tree = [int(h.size) for h in hits]
    report.pages_read = counter.pages_read
    report.elapsed_us = (time.perf_counter() - t0) * 1e6
    return items, report


def knn_search(index: BrePartitionIndex, y, k: int):
    """Exact kNN; returns (list of ResultItem, SearchReport)."""
    return _search(index, y, k, None)


def approx_knn_search(index: BrePartitionIndex, y, k: int, p: float):
    """kNN with every per-subspace bound scaled by the coefficient for probability p."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    return _search(index, y, k, None if p == 1 else p)


def linear_scan_oracle(dataset, div: Divergence, y, k: int) -> list[ResultItem]:
    X = np.asarray(dataset, dtype=np.float64)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k must lie in [1, {X.shape[0]}], got {k}")
    y = div.validate(y, "query")
    return _rank(np.arange(X.shape[0]), div.distances(X, y), k)
