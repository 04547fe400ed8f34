"""Fixed-size page storage of full-dimensional points with page-read accounting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

DEFAULT_PAGE_SIZE = 32768
COORD_BYTES = 4  # points are stored as little-endian float32


class CorruptionError(RuntimeError):
    """An address or page does not resolve inside the store."""


class PointAddress(NamedTuple):
    page_number: int
    slot: int


@dataclass
class IoCounter:
    """Distinct pages touched by one query."""

    pages: set = field(default_factory=set)

    @property
    def pages_read(self) -> int:
        return len(self.pages)

    def reset(self) -> None:
        self.pages.clear()


class PageStore:
    """Records packed sequentially into pages of ``page_size`` bytes.

    ``pages`` is a (page_count, records_per_page, d) float32 array (an
    in-memory array or a read-only view of the index file); ``slot_ids``
    holds the record id at each slot, -1 for unused slots of the last page.
    """

    def __init__(self, pages: np.ndarray, slot_ids: np.ndarray, page_size: int, path=None):
        self.pages = pages
        self.slot_ids = np.asarray(slot_ids, dtype=np.int64)
        self.page_size = int(page_size)
        self.path = path
        n = int(np.count_nonzero(self.slot_ids >= 0))
        flat = self.slot_ids.ravel()
        pos = np.flatnonzero(flat >= 0)
        if not np.array_equal(np.sort(flat[pos]), np.arange(n)):
            raise CorruptionError("slot table is not a permutation of record ids")
        rpp = self.records_per_page
        self.page_of = np.empty(n, dtype=np.int64)
        self.slot_of = np.empty(n, dtype=np.int64)
        self.page_of[flat[pos]] = pos // rpp
        self.slot_of[flat[pos]] = pos % rpp

    @property
    def d(self) -> int:
        return self.pages.shape[2]

    @property
    def n(self) -> int:
        return self.page_of.size

    @property
    def record_width(self) -> int:
        return self.d * COORD_BYTES

    @property
    def records_per_page(self) -> int:
        return self.pages.shape[1]

    @property
    def page_count(self) -> int:
        return self.pages.shape[0]

    def address(self, record_id: int) -> PointAddress:
        return PointAddress(int(self.page_of[record_id]), int(self.slot_of[record_id]))

    def addresses(self, record_ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(record_ids, dtype=np.int64)
        return self.page_of[ids], self.slot_of[ids]

    def record_at(self, page: int, slot: int) -> int:
        return int(self.slot_ids[page, slot])

    def all_points(self) -> np.ndarray:
        """Every record as float64, indexed by record id (no accounting)."""
        out = np.empty((self.n, self.d), dtype=np.float64)
        out[np.arange(self.n)] = self.pages[self.page_of, self.slot_of]
        return out


def records_per_page(page_size: int, d: int) -> int:
    if page_size <= 0 or page_size & (page_size - 1):
        raise ValueError(f"page size must be a power of two, got {page_size}")
    rpp = page_size // (d * COORD_BYTES)
    if rpp < 1:
        raise ValueError(f"a {d}-dimensional record does not fit in a {page_size}-byte page")
    return rpp


def write_point_store(points, order, page_size: int = DEFAULT_PAGE_SIZE, path=None):
    """Pack ``points[order]`` into pages; returns (store, {record id: PointAddress}).

    With ``path`` the pages are also written to that file, page after page.
    """
    P = np.asarray(points, dtype=np.float32)
    n, d = P.shape
    order = np.asarray(order, dtype=np.int64)
    if not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError("order must be a permutation of 0..n-1")
    rpp = records_per_page(page_size, d)
    page_count = -(-n // rpp)
    pages = np.zeros((page_count * rpp, d), dtype="<f4")
    pages[:n] = P[order]
    slot_ids = np.full(page_count * rpp, -1, dtype=np.int64)
    slot_ids[:n] = order
    pages = pages.reshape(page_count, rpp, d)
    if path is not None:
        pad = page_size - rpp * d * COORD_BYTES
        with open(path, "wb") as fh:
            for p in pages:
                fh.write(p.tobytes())
                fh.write(b"\0" * pad)
    store = PageStore(pages, slot_ids.reshape(page_count, rpp), page_size, path)
    amap = {int(r): PointAddress(int(store.page_of[r]), int(store.slot_of[r])) for r in range(n)}
    return store, amap


def fetch_points(store: PageStore, addresses, counter: IoCounter) -> np.ndarray:
    """Read the addressed records as float64 rows, in the order given.

    ``addresses`` is an iterable of PointAddress or a (pages, slots) pair of
    arrays.  The counter grows by the number of distinct pages not yet
    touched in this query.
    """
    pages, slots = _as_arrays(addresses)
    if pages.size == 0:
        return np.empty((0, store.d), dtype=np.float64)
    bad = (pages < 0) | (pages >= store.page_count) | (slots < 0) | (slots >= store.records_per_page)
    if bad.any():
        i = int(np.argmax(bad))
        raise CorruptionError(f"address ({pages[i]}, {slots[i]}) does not resolve")
    if np.any(store.slot_ids[pages, slots] < 0):
        raise CorruptionError("address points at an empty slot")
    counter.pages.update(np.unique(pages).tolist())
    return store.pages[pages, slots].astype(np.float64)


def _as_arrays(addresses) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(addresses, tuple) and len(addresses) == 2 and isinstance(addresses[0], np.ndarray):
        return np.asarray(addresses[0], np.int64), np.asarray(addresses[1], np.int64)
    items: Iterable = list(addresses)
    if not items:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    arr = np.asarray([(a[0], a[1]) for a in items], dtype=np.int64)
    return arr[:, 0], arr[:, 1]
