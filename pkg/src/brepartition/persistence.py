"""Single-file index format.

Layout (little-endian; integers are u64, reals f64)::

    fixed header     magic "BBF1", version, sizes, build settings, cost params
    variable header  layout perm, partition cut points, per-tree section
                     offsets, offsets of the remaining sections
    weights          d reals (Mahalanobis only)
    transforms       n x M x 2 reals
    stats            mean, variance, optional histograms
    trees            one section per tree, nodes in depth-first preorder
    slot table       record id of every page slot (-1 when unused)
    pages            page_count pages of page_size bytes, float32 records

A tree node is ``tag, radius, center[w]`` followed by its two child node
numbers (tag 0) or by its leaf address list ``count, (page, slot)*`` (tag 1).
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .bbtree import BBTree, RootFinding
from .bounds import PartitionLayout
from .divergences import KIND_CODES, Divergence
from .forest import BBForest
from .pagestore import COORD_BYTES, CorruptionError, PageStore
from .planner import CostParams
from .search import BrePartitionIndex, DimStats, SearchConfig

MAGIC = b"BBF1"
FORMAT_VERSION = 1

_FIXED = struct.Struct("<4s" + "Q" * 21 + "d" * 5)
_FIELDS = ("version", "header_bytes", "file_bytes", "n", "d", "M", "divergence", "page_size",
           "records_per_page", "page_count", "leaf_capacity", "seed", "anchor", "pccp", "clamp",
           "root_max_iter", "has_params", "params_k", "params_degenerate", "hist_bins",
           "auto_partitions", "floor", "root_tol", "A", "alpha", "beta")
_SECTIONS = ("weights", "transforms", "stats", "slots", "pages")
_NODE = struct.Struct("<Qd")
_U64 = struct.Struct("<Q")


class IndexFormatError(ValueError):
    """The file is not a loadable index."""


class BadMagicError(IndexFormatError):
    pass


class VersionMismatchError(IndexFormatError):
    pass


class TruncatedIndexError(IndexFormatError):
    pass


_KIND_OF_CODE = {v: k for k, v in KIND_CODES.items()}


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _u64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<u8").tobytes()


def _tree_section(tree: BBTree, store: PageStore) -> bytes:
    out = [_u64([tree.n_nodes, tree.width]), _u64(tree.dims)]
    pages, slots = store.addresses(tree.order)
    for i in range(tree.n_nodes):
        leaf = tree.left[i] < 0
        out.append(_NODE.pack(int(leaf), float(tree.radius[i])))
        out.append(_f64(tree.centers[i]))
        if leaf:
            a, b = tree.start[i], tree.stop[i]
            out.append(_U64.pack(int(b - a)))
            out.append(_u64(np.stack([pages[a:b], slots[a:b]], axis=1)))
        else:
            out.append(_u64([tree.left[i], tree.right[i]]))
    return b"".join(out)


def serialize_index(index: BrePartitionIndex, path) -> int:
    """Write ``index`` to ``path``; returns the file size in bytes."""
    div = index.div
    store = index.store
    n, d, M = index.n, index.d, index.M
    cfg = index.config
    params = index.params
    stats = index.stats
    bins = 0 if stats.hist_counts is None else stats.hist_counts.shape[1]

    body = []
    weights = b"" if div.weights is None else _f64(div.weights)
    stats_bytes = _f64(stats.mean) + _f64(stats.var)
    if bins:
        stats_bytes += _u64(stats.hist_counts) + _f64(stats.hist_edges)
    trees = [_tree_section(t, store) for t in index.forest.trees]
    slots = np.ascontiguousarray(store.slot_ids, dtype="<i8").tobytes()

    cuts = [a for a, _ in index.layout.bounds] + [d]
    var_len = 8 * (d + (M + 1) + M + len(_SECTIONS))
    header_bytes = _FIXED.size + var_len
    pos = header_bytes
    offsets = {}
    tree_offsets = []
    for name, blob in (("weights", weights), ("transforms", _f64(index.transforms)),
                       ("stats", stats_bytes)):
        offsets[name] = pos
        body.append(blob)
        pos += len(blob)
    for blob in trees:
        tree_offsets.append(pos)
        body.append(blob)
        pos += len(blob)
    offsets["slots"] = pos
    body.append(slots)
    pos += len(slots)
    # pages start on a page boundary
    pad = -pos % store.page_size
    body.append(b"\0" * pad)
    pos += pad
    offsets["pages"] = pos
    rpp = store.records_per_page
    raw = np.zeros((store.page_count, store.page_size), dtype=np.uint8)
    raw[:, :rpp * d * COORD_BYTES] = np.ascontiguousarray(store.pages, dtype="<f4").reshape(
        store.page_count, -1).view(np.uint8)
    body.append(raw.tobytes())
    pos += raw.size

    values = dict(
        version=FORMAT_VERSION, header_bytes=header_bytes, file_bytes=pos, n=n, d=d, M=M,
        divergence=div.code, page_size=store.page_size, records_per_page=rpp,
        page_count=store.page_count, leaf_capacity=cfg.leaf_capacity, seed=cfg.seed,
        anchor=index.forest.anchor_tree, pccp=int(cfg.pccp), clamp=int(div.clamp),
        root_max_iter=cfg.root.max_iter, has_params=int(params is not None),
        params_k=params.k if params else 0,
        params_degenerate=int(params.degenerate) if params else 0, hist_bins=bins,
        auto_partitions=int(cfg.partitions == "auto"), floor=div.floor, root_tol=cfg.root.tol,
        A=params.A if params else 0.0, alpha=params.alpha if params else 0.0,
        beta=params.beta if params else 0.0,
    )
    head = _FIXED.pack(MAGIC, *(values[f] for f in _FIELDS))
    head += _u64(index.layout.perm) + _u64(cuts) + _u64(tree_offsets)
    head += _u64([offsets[s] for s in _SECTIONS])
    assert len(head) == header_bytes
    with open(path, "wb") as fh:
        fh.write(head)
        for blob in body:
            fh.write(blob)
    return pos


def read_header(path) -> dict:
    """Decode and check the header; raises the format errors above."""
    with open(path, "rb") as fh:
        head = fh.read(_FIXED.size)
        if len(head) >= 4 and head[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        if len(head) < _FIXED.size:
            raise TruncatedIndexError(f"{path}: file ends inside the fixed header")
        fields = dict(zip(_FIELDS, _FIXED.unpack(head)[1:]))
        if fields["version"] != FORMAT_VERSION:
            raise VersionMismatchError(
                f"{path}: format version {fields['version']}, this build reads {FORMAT_VERSION}")
        size = os.fstat(fh.fileno()).st_size
        if size < fields["file_bytes"] or size < fields["header_bytes"]:
            raise TruncatedIndexError(
                f"{path}: {size} bytes on disk, header declares {fields['file_bytes']}")
        if size != fields["file_bytes"]:
            raise CorruptionError(f"{path}: {size - fields['file_bytes']} trailing bytes")
        d, M = fields["d"], fields["M"]
        rest = np.frombuffer(fh.read(fields["header_bytes"] - _FIXED.size), dtype="<u8")
    if rest.size != d + (M + 1) + M + len(_SECTIONS):
        raise CorruptionError(f"{path}: variable header has the wrong length")
    fields["perm"] = rest[:d].astype(np.int64)
    cuts = rest[d:d + M + 1].astype(np.int64)
    fields["bounds"] = tuple(zip(cuts[:-1].tolist(), cuts[1:].tolist()))
    fields["tree_offsets"] = rest[d + M + 1:d + 2 * M + 1].astype(np.int64).tolist()
    fields["sections"] = dict(zip(_SECTIONS, rest[d + 2 * M + 1:].astype(np.int64).tolist()))
    return fields


def _read_tree(buf: memoryview, off: int, store: PageStore, div: Divergence,
               leaf_capacity: int) -> BBTree:
    n_nodes, width = _U64.unpack_from(buf, off)[0], _U64.unpack_from(buf, off + 8)[0]
    off += 16
    dims = np.frombuffer(buf, "<u8", width, off).astype(np.int64)
    off += 8 * width
    centers = np.empty((n_nodes, width))
    radius = np.empty(n_nodes)
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    start = np.zeros(n_nodes, dtype=np.int64)
    stop = np.zeros(n_nodes, dtype=np.int64)
    leaf_ids = []
    filled = 0
    for i in range(n_nodes):
        tag, radius[i] = _NODE.unpack_from(buf, off)
        off += _NODE.size
        centers[i] = np.frombuffer(buf, "<f8", width, off)
        off += 8 * width
        if tag:
            count = _U64.unpack_from(buf, off)[0]
            off += 8
            addr = np.frombuffer(buf, "<u8", 2 * count, off).astype(np.int64).reshape(-1, 2)
            off += 16 * count
            leaf_ids.append(store.slot_ids[addr[:, 0], addr[:, 1]])
            start[i], stop[i] = filled, filled + count
            filled += count
        else:
            left[i], right[i] = np.frombuffer(buf, "<u8", 2, off).astype(np.int64)
            off += 16
    # children follow their parent in preorder, so a reverse sweep fills inner slices
    for i in range(n_nodes - 1, -1, -1):
        if left[i] >= 0:
            start[i], stop[i] = start[left[i]], stop[right[i]]
    order = np.concatenate(leaf_ids) if leaf_ids else np.empty(0, dtype=np.int64)
    if order.size != store.n or np.any(order < 0):
        raise CorruptionError("tree leaves do not cover every record exactly once")
    sub = store.all_points()[order][:, dims]
    return BBTree(div, dims, order, centers, radius, left, right, start, stop, sub,
                  leaf_capacity)


def deserialize_index(path) -> BrePartitionIndex:
    """Load an index written by serialize_index; the pages stay memory-mapped."""
    h = read_header(path)
    n, d, M = h["n"], h["d"], h["M"]
    sec = h["sections"]
    with open(path, "rb") as fh:
        meta = fh.read(sec["slots"] + 8 * h["page_count"] * h["records_per_page"])
    buf = memoryview(meta)
    kind = _KIND_OF_CODE.get(h["divergence"])
    if kind is None:
        raise CorruptionError(f"unknown divergence code {h['divergence']}")
    weights = None
    if sec["transforms"] > sec["weights"]:
        weights = np.frombuffer(buf, "<f8", d, sec["weights"]).copy()
    div = Divergence(kind, weights=weights, floor=h["floor"], clamp=bool(h["clamp"]))
    transforms = np.frombuffer(buf, "<f8", n * M * 2, sec["transforms"]).reshape(n, M, 2).copy()
    off = sec["stats"]
    mean = np.frombuffer(buf, "<f8", d, off).copy()
    var = np.frombuffer(buf, "<f8", d, off + 8 * d).copy()
    counts = edges = None
    bins = h["hist_bins"]
    if bins:
        off += 16 * d
        counts = np.frombuffer(buf, "<u8", d * bins, off).astype(np.int64).reshape(d, bins)
        edges = np.frombuffer(buf, "<f8", d * (bins + 1), off + 8 * d * bins).reshape(d, bins + 1).copy()
    stats = DimStats(mean, var, counts, edges)

    P, rpp = h["page_count"], h["records_per_page"]
    slot_ids = np.frombuffer(buf, "<i8", P * rpp, sec["slots"]).reshape(P, rpp).copy()
    raw = np.memmap(path, dtype="<f4", mode="r", offset=sec["pages"],
                    shape=(P, h["page_size"] // COORD_BYTES))
    pages = raw[:, :rpp * d].reshape(P, rpp, d)
    store = PageStore(pages, slot_ids, h["page_size"], path)
    if store.n != n:
        raise CorruptionError(f"slot table holds {store.n} records, header says {n}")

    layout = PartitionLayout(h["perm"], h["bounds"])
    trees = [_read_tree(buf, off, store, div, h["leaf_capacity"]) for off in h["tree_offsets"]]
    forest = BBForest(trees, layout, store, h["anchor"])
    params = None
    if h["has_params"]:
        params = CostParams(h["A"], h["alpha"], h["beta"], n, d, h["params_k"],
                            bool(h["params_degenerate"]))
    config = SearchConfig(div, partitions="auto" if h["auto_partitions"] else M,
                          pccp=bool(h["pccp"]), leaf_capacity=h["leaf_capacity"],
                          page_size=h["page_size"], seed=h["seed"],
                          root=RootFinding(h["root_max_iter"], h["root_tol"]))
    return BrePartitionIndex(div, layout, transforms, forest, stats, params, config)
