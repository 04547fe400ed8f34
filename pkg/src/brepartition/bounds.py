"""Per-subspace point/query transforms and Cauchy upper bounds.

A data point x restricted to subspace i is summarised by two numbers,
``alpha_x = sum f(x_j)`` and ``gamma_x = sum x_j**2``; a query y by three,
``alpha_y = -sum f(y_j)``, ``beta_yy = sum y_j f'(y_j)`` and
``delta_y = sum f'(y_j)**2``.  Cauchy-Schwarz on the cross term gives

    D_f(x_i, y_i) <= alpha_x + alpha_y + beta_yy + sqrt(gamma_x * delta_y)

so bounds for every record are O(M) each once the tuples are precomputed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .divergences import Divergence


class PTuple(NamedTuple):
    alpha_x: float
    gamma_x: float


class QTriple(NamedTuple):
    alpha_y: float
    beta_yy: float
    delta_y: float


@dataclass(frozen=True, eq=False)
class PartitionLayout:
    """Dimension permutation plus M half-open ranges over its positions.

    Partition ``i`` holds original dimensions ``perm[bounds[i][0]:bounds[i][1]]``.
    """

    perm: np.ndarray
    bounds: tuple

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        d = perm.size
        if d == 0 or not np.array_equal(np.sort(perm), np.arange(d)):
            raise ValueError("perm must be a permutation of 0..d-1")
        bounds = tuple((int(a), int(b)) for a, b in self.bounds)
        pos = 0
        for a, b in bounds:
            if a != pos or b <= a:
                raise ValueError(f"bounds must tile 0..{d} with non-empty ranges")
            pos = b
        if pos != d:
            raise ValueError(f"bounds must tile 0..{d} with non-empty ranges")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def contiguous(cls, d: int, M: int) -> "PartitionLayout":
        """Identity order split into M balanced runs (widths differ by at most 1)."""
        if not 1 <= M <= d:
            raise ValueError(f"M must lie in [1, {d}], got {M}")
        return cls.from_groups([np.arange(g[0], g[-1] + 1) for g in np.array_split(np.arange(d), M)])

    @classmethod
    def from_groups(cls, parts: Sequence[Sequence[int]]) -> "PartitionLayout":
        perm = np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])
        stops = np.cumsum([len(p) for p in parts])
        starts = np.concatenate([[0], stops[:-1]])
        return cls(perm, tuple(zip(starts.tolist(), stops.tolist())))

    @property
    def M(self) -> int:
        return len(self.bounds)

    @property
    def d(self) -> int:
        return self.perm.size

    @property
    def widths(self) -> list[int]:
        return [b - a for a, b in self.bounds]

    @property
    def starts(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds], dtype=np.int64)

    def dims(self, i: int) -> np.ndarray:
        """Original dimension indices of partition ``i``."""
        a, b = self.bounds[i]
        return self.perm[a:b]

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x)
        return [x[..., self.dims(i)] for i in range(self.M)]


def ub_compute(p: PTuple, q: QTriple) -> float:
    return p[0] + q[0] + q[1] + float(np.sqrt(p[1] * q[2]))


def p_table(X, layout: PartitionLayout, div: Divergence) -> np.ndarray:
    """(n, M, 2) array of (alpha_x, gamma_x) for every record and subspace."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xp = X[:, layout.perm]
    w = div.weights_for(layout.perm)
    starts = layout.starts
    out = np.empty((X.shape[0], layout.M, 2))
    out[:, :, 0] = np.add.reduceat(div.f(Xp, w), starts, axis=1)
    out[:, :, 1] = np.add.reduceat(Xp * Xp, starts, axis=1)
    return out


def p_transform(x, layout: PartitionLayout, div: Divergence, record_id=None) -> list[PTuple]:
    what = "record" if record_id is None else f"record {record_id}"
    x = div.validate(x, what)
    return [PTuple(float(a), float(g)) for a, g in p_table(x[None, :], layout, div)[0]]


def q_table(y, layout: PartitionLayout, div: Divergence) -> np.ndarray:
    """(M, 3) array of (alpha_y, beta_yy, delta_y)."""
    y = np.asarray(y, dtype=np.float64)
    yp = y[layout.perm]
    w = div.weights_for(layout.perm)
    g = div.grad(yp, w)
    cols = np.stack([-div.f(yp, w), yp * g, g * g], axis=1)
    return np.add.reduceat(cols, layout.starts, axis=0)


def q_transform(y, layout: PartitionLayout, div: Divergence) -> list[QTriple]:
    y = div.validate(y, "query")
    return [QTriple(*map(float, row)) for row in q_table(y, layout, div)]


def ub_table(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """(n, M) per-subspace upper bounds for a whole transform table."""
    Q = np.asarray(Q, dtype=np.float64)
    return P[:, :, 0] + (Q[:, 0] + Q[:, 1]) + np.sqrt(P[:, :, 1] * Q[:, 2])


@dataclass(frozen=True)
class BoundVector:
    per_subspace: np.ndarray
    total: float
    defining_record: int


def kth_smallest(values: np.ndarray, k: int) -> int:
    """Index of the k-th smallest value (1-based k), ties to the smaller index.

    Linear time: a partition finds the threshold, then only the tied
    entries are ordered.
    """
    n = values.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    thr = np.partition(values, k - 1)[k - 1]
    below = int(np.count_nonzero(values < thr))
    tied = np.flatnonzero(values == thr)
    return int(tied[k - 1 - below])


def qb_determine(table, q, k: int) -> BoundVector:
    """Searching bound: per-subspace components of the k-th smallest total UB.

    ``table`` is an (n, M, 2) array (or a list of per-record PTuple lists),
    ``q`` an (M, 3) array (or list of QTriple).
    """
    P = np.asarray(table, dtype=np.float64)
    if P.ndim != 3 or P.shape[2] != 2:
        raise ValueError("table must have shape (n, M, 2)")
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    ubs = ub_table(P, np.asarray(q, dtype=np.float64))
    totals = ubs.sum(axis=1)
    t = kth_smallest(totals, k)
    return BoundVector(ubs[t].copy(), float(totals[t]), t)
