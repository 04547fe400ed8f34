"""BB-forest: one ball tree per subspace over a shared leaf-ordered page store."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bbtree import (CONTAINED, DEFAULT_LEAF_CAPACITY, DISJOINT, BBTree, RootFinding,
                     build_tree, relation_codes)
from .bounds import PartitionLayout
from .divergences import Divergence
from .pagestore import DEFAULT_PAGE_SIZE, PageStore, write_point_store

# Coordinate used to pad narrower subspaces; every divergence term is 0 at (1, 1).
PAD = 1.0


class NodeTable:
    """Nodes of several trees concatenated and padded to a common width.

    Lets one vectorised relation test run over the frontier of every tree.
    """

    def __init__(self, trees: list[BBTree]):
        self.trees = trees
        self.div = trees[0].div
        width = max(t.width for t in trees)
        sizes = [t.n_nodes for t in trees]
        self.offset = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        N = int(self.offset[-1])
        self.width = width
        self.centers = np.full((N, width), PAD)
        self.lo = np.full((N, width), PAD)
        self.hi = np.full((N, width), PAD)
        self.weights = np.ones((len(trees), width))
        self.radius = np.empty(N)
        self.left = np.empty(N, dtype=np.int64)
        self.right = np.empty(N, dtype=np.int64)
        self.tree_of = np.empty(N, dtype=np.int64)
        for i, t in enumerate(trees):
            a, b = self.offset[i], self.offset[i + 1]
            w = t.width
            self.centers[a:b, :w] = t.centers
            self.lo[a:b, :w] = t.lo
            self.hi[a:b, :w] = t.hi
            if np.ndim(t.weights):
                self.weights[i, :w] = t.weights
            self.radius[a:b] = t.radius
            self.left[a:b] = np.where(t.left >= 0, t.left + a, -1)
            self.right[a:b] = np.where(t.right >= 0, t.right + a, -1)
            self.tree_of[a:b] = i
        self.weighted = any(np.ndim(t.weights) for t in trees)


def _leaf_hits(tree: BBTree, nodes: np.ndarray, q: np.ndarray, r: float) -> np.ndarray:
    starts, stops = tree.start[nodes], tree.stop[nodes]
    lens = stops - starts
    if lens.sum() == 0:
        return np.empty(0, dtype=np.int64)
    pos = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens) + np.arange(lens.sum())
    return tree.order[pos[tree.linear.within(q, r, pos)]]


def traverse(table: NodeTable, queries, radii, root: RootFinding = RootFinding()) -> list[np.ndarray]:
    """Per-tree range queries, run level by level across all trees.

    ``queries[i]`` is the sub-query of tree i (its own width), ``radii[i]``
    its range.  Returns one array of record ids per tree.
    """
    trees = table.trees
    M = len(trees)
    Qpad = np.full((M, table.width), PAD)
    for i, q in enumerate(queries):
        Qpad[i, :q.size] = q
    radii = np.asarray(radii, dtype=np.float64)
    contained = [[] for _ in range(M)]
    leaf_nodes = [[] for _ in range(M)]
    frontier = table.offset[:-1].copy()
    frontier = frontier[radii >= 0]
    while frontier.size:
        tid = table.tree_of[frontier]
        w = table.weights[tid] if table.weighted else 1.0
        codes = relation_codes(table.div, table.centers[frontier], table.radius[frontier],
                               Qpad[tid], radii[tid], table.lo[frontier], table.hi[frontier],
                               w, root)
        keep = codes != DISJOINT
        full = codes == CONTAINED
        for node, t in zip(frontier[full], tid[full]):
            contained[t].append(node - table.offset[t])
        open_ = keep & ~full
        leaf = open_ & (table.left[frontier] < 0)
        for node, t in zip(frontier[leaf], tid[leaf]):
            leaf_nodes[t].append(node - table.offset[t])
        inner = open_ & ~leaf
        frontier = np.concatenate([table.left[frontier[inner]], table.right[frontier[inner]]])
    out = []
    for i, t in enumerate(trees):
        parts = [t.order[t.start[n]:t.stop[n]] for n in contained[i]]
        if leaf_nodes[i]:
            parts.append(_leaf_hits(t, np.asarray(leaf_nodes[i]), queries[i], radii[i]))
        out.append(np.concatenate(parts) if parts else np.empty(0, dtype=np.int64))
    return out


class BBForest:
    """M ball trees, one per partition, sharing a single page store."""

    def __init__(self, trees: list[BBTree], layout: PartitionLayout, store: PageStore,
                 anchor_tree: int):
        self.trees = trees
        self.layout = layout
        self.store = store
        self.anchor_tree = int(anchor_tree)
        self.table = NodeTable(trees)

    @property
    def M(self) -> int:
        return len(self.trees)

    def leaf_addresses(self, tree: int) -> list[np.ndarray]:
        """(pages, slots) pairs of every leaf of one tree, in leaf order."""
        t = self.trees[tree]
        out = []
        for ids in t.leaves():
            out.append(np.stack(self.store.addresses(ids), axis=1))
        return out

    def range_queries(self, y_parts, radii, root: RootFinding = RootFinding()) -> list[np.ndarray]:
        return traverse(self.table, y_parts, radii, root)


def build_forest(dataset, layout: PartitionLayout, div: Divergence,
                 leaf_capacity: int = DEFAULT_LEAF_CAPACITY, seed: int = 0,
                 page_size: int = DEFAULT_PAGE_SIZE, workers: int = 1,
                 store_path=None) -> BBForest:
    """Anchor tree first, then the point store in its leaf order, then the rest.

    ``dataset`` rows should already be float32-representable; they are
    stored as float32.
    """
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layout.d:
        raise ValueError(f"dataset has shape {X.shape}, layout expects d={layout.d}")
    rng = np.random.default_rng(seed)
    anchor = int(rng.integers(layout.M))

    def make(i):
        dims = layout.dims(i)
        # one seed for every tree: equal subspaces give equal trees
        return build_tree(X[:, dims], div, leaf_capacity, seed, dims=dims)

    trees: list = [None] * layout.M
    trees[anchor] = make(anchor)
    store, _ = write_point_store(X, trees[anchor].order, page_size, store_path)
    rest = [i for i in range(layout.M) if i != anchor]
    if workers > 1 and len(rest) > 1:
        with ThreadPoolExecutor(workers) as ex:
            for i, t in zip(rest, ex.map(make, rest)):
                trees[i] = t
    else:
        for i in rest:
            trees[i] = make(i)
    return BBForest(trees, layout, store, anchor)
