"""Choosing the number of partitions and which dimensions share a partition."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bounds import PartitionLayout, p_table, q_table, ub_table
from .divergences import Divergence

log = logging.getLogger(__name__)

# Used when the fitted decay rate is not in (0, 1).
ALPHA_CAP = 0.999


@dataclass(frozen=True)
class CostParams:
    """Constants of the online cost model ``UB = A * alpha**M``, ``lambda = beta * UB``."""

    A: float
    alpha: float
    beta: float
    n: int
    d: int
    k: int = 1
    degenerate: bool = False

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError("A must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.n < 1 or self.d < 1 or self.k < 1:
            raise ValueError("n, d, k must be positive")

    @property
    def mu(self) -> float:
        return self.beta * self.A * self.n

    def candidate_fraction(self, M: float) -> float:
        """Modelled pruning fraction lambda, clamped to 1."""
        return min(1.0, self.beta * self.A * self.alpha**M)


def pearson(X, Y) -> float:
    """Pearson correlation; 0 when either sample has zero variance."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"length mismatch: {X.shape} vs {Y.shape}")
    if X.size < 2:
        raise ValueError("need at least two samples")
    dx = X - X.mean()
    dy = Y - Y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        return 0.0
    return float(np.clip((dx @ dy) / math.sqrt(vx * vy), -1.0, 1.0))


def correlation_matrix(data) -> np.ndarray:
    """d x d Pearson matrix with zero rows/cols for constant dimensions."""
    X = np.asarray(data, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    const = norms == 0
    norms[const] = 1.0
    Z = Xc / norms
    r = np.clip(Z.T @ Z, -1.0, 1.0)
    r[const, :] = 0.0
    r[:, const] = 0.0
    idx = np.flatnonzero(~const)
    r[idx, idx] = 1.0
    return r


def pccp_groups(data, M: int, seed: int = 0, corr=None) -> list[list[int]]:
    """Assignment phase: greedy groups of up to M mutually correlated dims.

    Each group starts from a random unassigned dimension and grows by the
    unassigned dimension with the largest |r| to any dimension already in
    the group.  Constant dimensions only get picked once nothing else is
    left.  Groups list dimensions in insertion order.
    """
    X = np.asarray(data, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= M <= d:
        raise ValueError(f"M must lie in [1, {d}], got {M}")
    r = np.abs(correlation_matrix(X) if corr is None else np.asarray(corr))
    const = X.std(axis=0) == 0 if corr is None else np.zeros(d, bool)
    rng = np.random.default_rng(seed)
    unassigned = np.ones(d, dtype=bool)
    groups = []
    while unassigned.any():
        pool = np.flatnonzero(unassigned & ~const)
        if pool.size == 0:
            pool = np.flatnonzero(unassigned)
        first = int(rng.choice(pool))
        group = [first]
        unassigned[first] = False
        # best |r| of every dim to the current group
        score = r[first].copy()
        while len(group) < M and unassigned.any():
            s = np.where(unassigned, score, -np.inf)
            s = np.where(const & unassigned, -0.5, s)
            nxt = int(np.argmax(s))
            group.append(nxt)
            unassigned[nxt] = False
            np.maximum(score, r[nxt], out=score)
        groups.append(group)
    return groups


def pccp(data, M: int, seed: int = 0) -> PartitionLayout:
    """Correlation-spreading layout: partition j takes the j-th member of every group."""
    groups = pccp_groups(data, M, seed)
    parts = [[g[j] for g in groups if j < len(g)] for j in range(M)]
    return PartitionLayout.from_groups(parts)


def fit_exponential(ms, ubs) -> tuple[float, float]:
    """Least-squares fit of ``log UB = log A + M log alpha``; returns (A, alpha)."""
    ms = np.asarray(ms, dtype=np.float64)
    ubs = np.asarray(ubs, dtype=np.float64)
    if ms.size < 2 or np.ptp(ms) == 0:
        raise ValueError("need observations at two or more distinct M")
    slope, intercept = np.polyfit(ms, np.log(ubs), 1)
    return float(np.exp(intercept)), float(np.exp(slope))


def default_m_grid(d: int) -> list[int]:
    grid = [1]
    while grid[-1] * 2 <= d:
        grid.append(grid[-1] * 2)
    if grid[-1] != d:
        grid.append(d)
    return grid


def fit_cost_params(dataset, div: Divergence, sample_count: int = 50, seed: int = 0,
                    m_values=None) -> CostParams:
    """Fit A, alpha on sampled (query, point) bounds and beta on coverage.

    For each sample pair the total UB is computed under contiguous layouts
    at every M in ``m_values``.  beta is the pooled ratio of covered
    fraction (records whose exact distance to the sample query is within
    the sample's UB) to UB.
    """
    X = np.asarray(dataset, dtype=np.float64)
    n, d = X.shape
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    if n < 2:
        raise ValueError("need at least two records to sample pairs")
    rng = np.random.default_rng(seed)
    m_values = default_m_grid(d) if m_values is None else sorted(set(int(m) for m in m_values))
    qi = rng.integers(0, n, size=sample_count)
    xi = (qi + rng.integers(1, n, size=sample_count)) % n
    ms, ubs, fracs = [], [], []
    for q, x in zip(qi, xi):
        y = X[q]
        exact = div.distances(X, y)
        for M in m_values:
            layout = PartitionLayout.contiguous(d, M)
            ub = float(ub_table(p_table(X[x][None, :], layout, div), q_table(y, layout, div)).sum())
            ms.append(M)
            ubs.append(ub)
            fracs.append(np.count_nonzero(exact <= ub) / n)
    ubs = np.asarray(ubs)
    tiny = np.finfo(float).tiny
    degenerate = bool(np.ptp(ubs) == 0)
    A, alpha = fit_exponential(ms, np.maximum(ubs, tiny)) if len(m_values) > 1 else (float(ubs.mean()), ALPHA_CAP)
    if degenerate or not 0 < alpha < 1 or not np.isfinite(A):
        log.warning("cost fit degenerate (alpha=%r); capping alpha at %s", alpha, ALPHA_CAP)
        degenerate = True
        alpha = ALPHA_CAP
        A = float(ubs.mean()) if ubs.mean() > 0 else 1.0
    total = float(ubs.sum())
    # all-zero bounds (duplicate points) leave beta undefined; any finite value works
    beta = float(np.sum(fracs)) / total if total > 0 else 1.0
    if not (np.isfinite(beta) and beta > 0):
        beta = tiny if beta == 0 else 1.0
    return CostParams(A=max(A, tiny), alpha=alpha, beta=beta, n=n, d=d, degenerate=degenerate)


def modeled_cost(params: CostParams, M: float) -> float:
    """T(M) = d + 2Mn + n ln k + beta A alpha^M n (d + ln k)."""
    n, d = params.n, params.d
    lk = math.log(params.k)
    return d + 2 * M * n + n * lk + params.beta * params.A * params.alpha**M * n * (d + lk)


def closed_form_partitions(params: CostParams) -> float | None:
    """Real-valued stationary point of T, or None where the formula is undefined."""
    lk = math.log(params.k)
    denom = -params.mu * math.log(params.alpha) * (params.d + lk)
    if not denom > 0:
        return None
    arg = 2 * params.n / denom
    if not (np.isfinite(arg) and 0 < arg < 1):
        return None
    return math.log(arg) / math.log(params.alpha)


def _scan(params: CostParams) -> int:
    costs = [modeled_cost(params, M) for M in range(1, params.d + 1)]
    return int(np.argmin(costs)) + 1


def optimal_partitions(params: CostParams) -> int:
    """Cost-minimising integer M in [1, d] (k is fixed to 1 when planning)."""
    if params.k != 1:
        params = CostParams(params.A, params.alpha, params.beta, params.n, params.d, 1,
                            params.degenerate)
    m = closed_form_partitions(params)
    if m is None:
        return _scan(params)
    lo = min(max(math.floor(m), 1), params.d)
    hi = min(max(math.ceil(m), 1), params.d)
    return lo if modeled_cost(params, lo) <= modeled_cost(params, hi) else hi
