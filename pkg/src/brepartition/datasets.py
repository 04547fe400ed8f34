"""Dataset readers and writers (fvecs and CSV)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class InconsistentDimensionError(ValueError):
    pass


class ShortReadError(ValueError):
    pass


class RaggedRowError(ValueError):
    pass


def read_fvecs(path) -> np.ndarray:
    """Read an fvecs file: each record is an int32 d followed by d float32 values."""
    raw = Path(path).read_bytes()
    if not raw:
        return np.empty((0, 0), dtype=np.float32)
    if len(raw) < 4:
        raise ShortReadError(f"{path}: short read at byte offset 0")
    d = int(np.frombuffer(raw, "<i4", 1)[0])
    if d <= 0:
        raise InconsistentDimensionError(f"{path}: record 0 declares d={d}")
    rec = 4 * (d + 1)
    n = len(raw) // rec
    body = np.frombuffer(raw, dtype="<i4", count=n * (d + 1)).reshape(n, d + 1)
    dims = body[:, 0]
    bad = np.flatnonzero(dims != d)
    if bad.size:
        i = int(bad[0])
        raise InconsistentDimensionError(
            f"{path}: record {i} at byte offset {i * rec} declares d={int(dims[i])}, expected {d}")
    tail = len(raw) - n * rec
    if tail:
        off = n * rec
        if tail >= 4:
            d_tail = int(np.frombuffer(raw, "<i4", 1, off)[0])
            if d_tail != d:
                raise InconsistentDimensionError(
                    f"{path}: record {n} at byte offset {off} declares d={d_tail}, expected {d}")
        raise ShortReadError(f"{path}: short read in record {n} at byte offset {off} "
                             f"({tail} of {rec} bytes)")
    return body[:, 1:].view("<f4").astype(np.float32)


def write_fvecs(path, X) -> None:
    X = np.asarray(X, dtype="<f4")
    if X.ndim != 2:
        raise ValueError("expected an n x d matrix")
    n, d = X.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 0] = np.full(n, d, dtype="<i4").view("<f4")
    out[:, 1:] = X
    Path(path).write_bytes(out.tobytes())


def read_csv(path, has_header: bool = False) -> np.ndarray:
    """Comma-separated reals with a uniform column count; blank lines are skipped."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise RaggedRowError(f"{path}: line {lineno} has {len(row)} columns, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ValueError(f"{path}: line {lineno}: non-numeric cell {bad!r}") from None
    if not rows:
        return np.empty((0, 0), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(path, X) -> None:
    np.savetxt(path, np.asarray(X, dtype=np.float64), delimiter=",", fmt="%.9g")


def guess_format(path) -> str:
    return "csv" if str(path).lower().endswith((".csv", ".txt")) else "fvecs"


def load_matrix(path, fmt: str | None = None, has_header: bool = False) -> np.ndarray:
    fmt = fmt or guess_format(path)
    if fmt == "fvecs":
        return read_fvecs(path)
    if fmt == "csv":
        return read_csv(path, has_header)
    raise ValueError(f"unknown format {fmt!r}")


def save_matrix(path, X, fmt: str | None = None) -> None:
    fmt = fmt or guess_format(path)
    if fmt == "fvecs":
        write_fvecs(path, X)
    elif fmt == "csv":
        write_csv(path, X)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def sample_queries(X, count: int = 50, seed: int = 0):
    """Split off ``count`` random rows as held-out queries; returns (queries, rest)."""
    X = np.asarray(X)
    if not 0 <= count <= X.shape[0]:
        raise ValueError(f"count must lie in [0, {X.shape[0]}]")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(X.shape[0], count, replace=False))
    keep = np.ones(X.shape[0], dtype=bool)
    keep[pick] = False
    return X[pick], X[keep]
