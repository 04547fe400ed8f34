"""Bregman ball trees and sound ball/range relation tests.

Nodes live in flat arrays.  Every node covers a contiguous slice
``order[start:stop]`` of the tree's leaf-ordered record ids, so a node that
lies fully inside a query range contributes a slice without further tests.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw

from .divergences import Divergence, DivergenceKind, DomainError, LinearDistances

DEFAULT_LEAF_CAPACITY = 64
KMEANS_MAX_ITER = 50
INIT_SAMPLE = 256

# Relation codes used by the batched kernel.
DISJOINT, INTERSECTS, CONTAINED = 0, 1, 2


class Relation(enum.Enum):
    DISJOINT = "disjoint"
    INTERSECTS = "intersects"
    CONTAINED = "contained"


_CODE_TO_RELATION = {DISJOINT: Relation.DISJOINT, INTERSECTS: Relation.INTERSECTS,
                     CONTAINED: Relation.CONTAINED}


@dataclass(frozen=True)
class RootFinding:
    max_iter: int = 20
    tol: float = 1e-6


@dataclass(frozen=True)
class BregmanBall:
    center: np.ndarray
    radius: float

    def contains(self, x, div: Divergence, dims=None) -> bool:
        return div.distance(x, self.center, dims) <= self.radius


def leaf_capacity_guidance(n: int) -> int:
    """Suggested leaf capacity; grows with n so the tree height stays bounded."""
    return max(DEFAULT_LEAF_CAPACITY, n // 2**12)


# -- per-coordinate extent of a ball ---------------------------------------

def _lambert_roots(z):
    with np.errstate(all="ignore"):
        w0 = lambertw(z, 0).real
        wm = lambertw(z, -1).real
    return w0, wm


def coordinate_box(div: Divergence, centers, radius, w=1.0):
    """Outer box [lo, hi] of each ball {x : D(x, c) <= R}.

    Every term of a separable divergence is non-negative, so a member x of
    the ball has ``D(x_i, c_i) <= R`` in every coordinate; the box is the
    product of those one-dimensional intervals, widened until the interval
    ends provably sit outside.
    """
    C = np.asarray(centers, dtype=np.float64)
    R = np.asarray(radius, dtype=np.float64)[..., None] * np.ones_like(C)
    k = div.kind
    if k is DivergenceKind.SQUARED_EUCLIDEAN:
        off = np.sqrt(R) * (1 + 1e-12)
        return C - off, C + off
    if k is DivergenceKind.MAHALANOBIS:
        off = np.sqrt(2.0 * R / w) * (1 + 1e-12)
        return C - off, C + off
    if k is DivergenceKind.ITAKURA_SAITO:
        # term is phi(u) = u - 1 - log u with u = x / c; v = u - 1 below
        z = -np.exp(-(R + 1.0))
        w0, wm = _lambert_roots(z)
        v_lo = np.minimum(-w0 - 1.0, 0.0)   # u - 1 on the lower side
        v_hi = np.maximum(-wm - 1.0, 0.0)
        phi = lambda v: v - np.log1p(v)
        v_lo, v_hi = _widen(phi, v_lo, v_hi, R, lower_limit=-1.0)
        return C * (1.0 + v_lo), C * (1.0 + v_hi)
    # exponential: D = e^c * psi(delta), psi(delta) = expm1(delta) - delta
    S = R * np.exp(-C)
    a = S + 1.0
    w0, wm = _lambert_roots(-np.exp(-a))
    d_lo = np.minimum(-a - w0, 0.0)
    d_hi = np.maximum(-a - wm, 0.0)
    psi = lambda t: np.expm1(t) - t
    d_lo, d_hi = _widen(psi, d_lo, d_hi, S, lower_limit=-np.inf)
    return C + d_lo, C + d_hi


def _widen(phi, lo, hi, level, lower_limit):
    """Push each interval end outward until phi(end) >= level (or the end hits a limit)."""
    lo = np.where(np.isfinite(lo), lo, lower_limit)
    hi = np.where(np.isfinite(hi), hi, np.inf)
    zero = level <= 0
    lo = np.where(zero, 0.0, lo)
    hi = np.where(zero, 0.0, hi)
    lo = np.where(zero, lo, lo * (1 + 1e-9) - 1e-300)
    hi = np.where(zero, hi, hi * (1 + 1e-9) + 1e-300)
    with np.errstate(all="ignore"):
        for _ in range(200):
            bad_lo = (~zero) & (lo > lower_limit) & ~(phi(lo) >= level)
            bad_hi = (~zero) & np.isfinite(hi) & ~(phi(hi) >= level)
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo = np.where(bad_lo, np.maximum(lo * 1.001 - 1e-12, lower_limit), lo)
            hi = np.where(bad_hi, hi * 1.001 + 1e-12, hi)
        else:  # pragma: no cover - numerical safety net
            lo = np.where(bad_lo, lower_limit, lo)
            hi = np.where(bad_hi, np.inf, hi)
    return lo, hi


# -- relation kernel ---------------------------------------------------------

def relation_codes(div: Divergence, C, R, Q, r, lo, hi, w=1.0,
                   root: RootFinding = RootFinding()) -> np.ndarray:
    """Classify F balls against F query ranges at once.

    ``C``, ``Q``, ``lo``, ``hi`` are (F, width); ``R`` and ``r`` are (F,);
    ``w`` broadcasts against C.  A ball is DISJOINT only when a certified
    lower bound on min D(x, q) over the ball exceeds r, CONTAINED only when
    an upper bound on max D(x, q) is within r; everything else, including
    searches that hit the iteration cap, is INTERSECTS.
    """
    C = np.asarray(C, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    F = C.shape[0]
    out = np.full(F, INTERSECTS, dtype=np.int8)
    if F == 0:
        return out
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), C.shape) if np.ndim(w) else w
    gc = div.grad(C, w)
    gq = div.grad(Q, w)
    g = gc - gq
    d_cq = div.terms(C, Q, w).sum(axis=1)
    # three-point identity: D(x,q) = D(x,c) + D(c,q) + <g, x - c>
    lin = np.maximum(g * (lo - C), g * (hi - C))
    lin = np.where(np.isnan(lin), np.inf, lin).sum(axis=1)
    k = div.kind
    if k is DivergenceKind.SQUARED_EUCLIDEAN:
        lin = np.minimum(lin, np.sqrt(R * (g * g).sum(axis=1)))
    elif k is DivergenceKind.MAHALANOBIS:
        lin = np.minimum(lin, np.sqrt(R * (2.0 * g * g / w).sum(axis=1)))
    upper = R + d_cq + lin
    contained = upper <= r
    out[contained] = CONTAINED

    d_qc = div.terms(Q, C, w).sum(axis=1)
    todo = ~contained & (d_qc > R) & (d_cq > r)
    idx = np.flatnonzero(todo)
    if idx.size == 0:
        return out
    # Minimiser of D(., q) over the ball lies on the dual segment
    # x(t) = grad^-1(t grad f(c) + (1-t) grad f(q)), where D(x(t), c) = R.
    # D(x(t), c) decreases and D(x(t), q) increases in t, so a bracket
    # [t_out, t_in] bounds the minimum between D(x(t_out), q) and D(x(t_in), q).
    gc_a, gq_a = gc[idx], gq[idx]
    C_a, Q_a = C[idx], Q[idx]
    R_a, r_a = R[idx], r[idx]
    w_a = w[idx] if np.ndim(w) else w
    t_out = np.zeros(idx.size)
    t_in = np.ones(idx.size)
    h_out = d_qc[idx] - R_a
    h_in = np.full(idx.size, -1.0) * R_a
    margin = r_a * (1 + 1e-9)
    active = np.arange(idx.size)
    for it in range(root.max_iter):
        if active.size == 0:
            break
        a, b = t_out[active], t_in[active]
        ha, hb = h_out[active], h_in[active]
        mid = 0.5 * (a + b)
        if it % 2 == 0:
            denom = ha - hb
            with np.errstate(all="ignore"):
                sec = a + ha * (b - a) / denom
            ok = np.isfinite(sec) & (sec > a) & (sec < b)
            t = np.where(ok, sec, mid)
        else:
            t = mid
        wa = w_a[active] if np.ndim(w_a) else w_a
        with np.errstate(all="ignore"):
            x = div.grad_inv(t[:, None] * gc_a[active] + (1 - t)[:, None] * gq_a[active], wa)
            h = div.terms(x, C_a[active], wa).sum(axis=1) - R_a[active]
            dq = div.terms(x, Q_a[active], wa).sum(axis=1)
        bad = ~(np.isfinite(h) & np.isfinite(dq))
        outside = (h > 0) & ~bad
        inside = (h <= 0) & ~bad
        sel = active[outside]
        t_out[sel] = t[outside]
        h_out[sel] = h[outside]
        sel = active[inside]
        t_in[sel] = t[inside]
        h_in[sel] = h[inside]
        disjoint = outside & (dq > margin[active])
        meets = inside & (dq <= r_a[active])
        out[idx[active[disjoint]]] = DISJOINT
        narrow = (t_in[active] - t_out[active]) < root.tol
        done = disjoint | meets | narrow | bad
        active = active[~done]
    return out


def ball_range_relation(ball: BregmanBall, q, r: float, div: Divergence, dims=None,
                        root: RootFinding = RootFinding()) -> Relation:
    """Relation between a Bregman ball and the range {x : D(x, q) <= r}."""
    if r < 0:
        raise ValueError("range radius must be non-negative")
    c = np.asarray(ball.center, dtype=np.float64)[None, :]
    q = np.asarray(q, dtype=np.float64)[None, :]
    w = div.weights_for(dims)
    if np.ndim(w):
        w = np.asarray(w)[None, :]
    R = np.array([ball.radius], dtype=np.float64)
    lo, hi = coordinate_box(div, c, R, w)
    code = relation_codes(div, c, R, q, np.array([float(r)]), lo, hi, w, root)[0]
    return _CODE_TO_RELATION[int(code)]


# -- construction ---------------------------------------------------------------

def _two_means(S, div, w, rng):
    """Bregman 2-means (arithmetic-mean centroids); returns a boolean split mask."""
    m = S.shape[0]
    samp = S if m <= INIT_SAMPLE else S[rng.choice(m, INIT_SAMPLE, replace=False)]
    a = samp[rng.integers(samp.shape[0])]
    b = samp[int(np.argmax(div.terms(samp, a, w).sum(axis=1)))]
    c = samp[int(np.argmax(div.terms(samp, b, w).sum(axis=1)))]
    c0, c1 = b.copy(), c.copy()
    assign = None
    for _ in range(KMEANS_MAX_ITER):
        # D(x, c1) - D(x, c0) is affine in x, so one product decides the side
        g0, k0, _ = div.linear_form(c0, w)
        g1, k1, _ = div.linear_form(c1, w)
        new = S @ (g0 - g1).ravel() + (k1 - k0) < 0
        cnt = int(new.sum())
        if cnt == 0:
            new[int(np.argmax(div.terms(S, c0, w).sum(axis=1)))] = True
        elif cnt == m:
            new[int(np.argmax(div.terms(S, c1, w).sum(axis=1)))] = False
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        c0 = S[~assign].mean(axis=0)
        c1 = S[assign].mean(axis=0)
    return assign


class BBTree:
    """A binary Bregman ball tree over one subspace, stored as flat arrays."""

    def __init__(self, div, dims, order, centers, radius, left, right, start, stop,
                 sub, leaf_capacity):
        self.div = div
        self.dims = np.asarray(dims, dtype=np.int64)
        self.order = np.asarray(order, dtype=np.int64)
        self.centers = np.asarray(centers, dtype=np.float64)
        self.radius = np.asarray(radius, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.stop = np.asarray(stop, dtype=np.int64)
        self.sub = np.asarray(sub, dtype=np.float64)
        self.leaf_capacity = int(leaf_capacity)
        self.weights = div.weights_for(self.dims)
        wb = np.asarray(self.weights)[None, :] if np.ndim(self.weights) else self.weights
        self.lo, self.hi = coordinate_box(div, self.centers, self.radius, wb)
        fx = div.f(self.sub, wb)
        self.linear = LinearDistances(div, self.sub, fx.sum(axis=1), np.abs(fx).sum(axis=1),
                                      self.weights)
        self._table = None

    @property
    def width(self) -> int:
        return self.dims.size

    @property
    def n_nodes(self) -> int:
        return self.radius.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def ball(self, node: int) -> BregmanBall:
        return BregmanBall(self.centers[node].copy(), float(self.radius[node]))

    def records(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.stop[node]]

    def leaves(self) -> list[np.ndarray]:
        return [self.records(i) for i in np.flatnonzero(self.is_leaf)]

    def range_query(self, q, r: float, root: RootFinding = RootFinding()) -> np.ndarray:
        from .forest import NodeTable, traverse
        if self._table is None:
            self._table = NodeTable([self])
        q = np.asarray(q, dtype=np.float64)
        hits = traverse(self._table, [q], np.array([float(r)]), root)
        return np.sort(hits[0])


def build_tree(subspace_data, div: Divergence, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
               seed=0, dims=None) -> BBTree:
    """Recursive Bregman 2-means decomposition of an n x w matrix.

    ``dims`` are the original dimension indices of the columns (used for
    weighted divergences).  Splits that fail to separate fall back to an
    even split so leaves never exceed ``leaf_capacity``.
    """
    S = np.asarray(subspace_data, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0 or S.shape[1] == 0:
        raise ValueError("build_tree needs a non-empty n x w matrix")
    if leaf_capacity < 2:
        raise ValueError("leaf_capacity must be at least 2")
    if not div.in_domain(S).all():
        i, j = np.argwhere(~div.in_domain(S))[0]
        raise DomainError(f"record {i}, coordinate {j} = {S[i, j]!r} is outside the domain")
    n, width = S.shape
    dims = np.arange(width) if dims is None else np.asarray(dims, dtype=np.int64)
    w = div.weights_for(dims)
    wb = np.asarray(w)[None, :] if np.ndim(w) else w
    rng = np.random.default_rng(seed)

    order = np.empty(n, dtype=np.int64)
    centers, radius, left, right, start, stop = [], [], [], [], [], []
    # (parent, is_right_child, start, ids)
    stack = [(-1, False, 0, np.arange(n))]
    while stack:
        parent, is_right, s, ids = stack.pop()
        node = len(radius)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        pts = S[ids]
        c = pts.mean(axis=0)
        rad = float(div.terms(pts, c, wb).sum(axis=1).max())
        centers.append(c)
        radius.append(rad)
        left.append(-1)
        right.append(-1)
        start.append(s)
        stop.append(s + ids.size)
        if ids.size <= leaf_capacity:
            order[s:s + ids.size] = ids
            continue
        mask = _two_means(pts, div, wb, rng) if rad > 0 else None
        if mask is None or mask.all() or not mask.any():
            half = ids.size // 2
            a_ids, b_ids = ids[:half], ids[half:]
        else:
            a_ids, b_ids = ids[~mask], ids[mask]
        # push right first so the left subtree is numbered next (preorder)
        stack.append((node, True, s + a_ids.size, b_ids))
        stack.append((node, False, s, a_ids))
    return BBTree(div, dims, order, np.array(centers).reshape(-1, width), radius, left, right,
                  start, stop, S[order], leaf_capacity)


def range_query(tree: BBTree, q, r: float, div: Divergence | None = None,
                root: RootFinding = RootFinding()) -> set[int]:
    """Record ids whose subspace divergence to ``q`` is at most ``r``."""
    if r < 0:
        raise ValueError("range radius must be non-negative")
    return set(tree.range_query(q, r, root).tolist())
