"""Benchmark runs: per-query rows, aggregates, CSV/JSON reports and M sweeps."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .search import (BrePartitionIndex, ResultItem, SearchConfig, approx_knn_search, build,
                     knn_search, linear_scan_oracle)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = ("query_id", "k", "mode", "candidates", "pages_read", "elapsed_us",
           "overall_ratio", "recall")
PERCENTILES = (50, 90, 99)


def overall_ratio(approx: list[ResultItem], exact: list[ResultItem]) -> float | None:
    """Mean of approx[i].distance / exact[i].distance.

    A zero exact distance counts as ratio 1 when the approximate distance is
    zero as well; otherwise the query is degenerate and None is returned.
    """
    if len(approx) != len(exact):
        raise ValueError(f"length mismatch: {len(approx)} vs {len(exact)}")
    if not exact:
        raise ValueError("empty result lists")
    total = 0.0
    for a, e in zip(approx, exact):
        if e.distance == 0:
            if a.distance != 0:
                return None
            total += 1.0
        else:
            total += a.distance / e.distance
    return total / len(exact)


def recall(approx: list[ResultItem], exact: list[ResultItem]) -> float:
    """Fraction of the exact id set present in the returned set."""
    truth = {e.record_id for e in exact}
    return len(truth & {a.record_id for a in approx}) / len(truth)


def parse_mode(mode: str) -> float | None:
    """'exact' -> None, 'approx:P' -> P."""
    if mode == "exact":
        return None
    kind, _, p = mode.partition(":")
    if kind != "approx" or not p:
        raise ValueError(f"mode must be 'exact' or 'approx:P', got {mode!r}")
    p = float(p)
    if not 0 < p <= 1:
        raise ValueError("approx probability must lie in (0, 1]")
    return p


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    load_seconds: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def aggregates(self) -> list[dict]:
        """Means and percentiles per (k, mode), in first-seen order."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["k"], r["mode"]), []).append(r)
        out = []
        for (k, mode), rows in groups.items():
            agg = {"k": k, "mode": mode, "queries": len(rows)}
            for col in ("candidates", "pages_read", "elapsed_us"):
                v = np.array([r[col] for r in rows], dtype=np.float64)
                agg[f"mean_{col}"] = float(v.mean())
                for q in PERCENTILES:
                    agg[f"p{q}_{col}"] = float(np.percentile(v, q))
            ors = [r["overall_ratio"] for r in rows if r["overall_ratio"] is not None]
            agg["mean_overall_ratio"] = float(np.mean(ors)) if ors else None
            agg["degenerate"] = len(rows) - len(ors)
            agg["mean_recall"] = float(np.mean([r["recall"] for r in rows]))
            out.append(agg)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version={self.schema_version}\n")
            w = csv.DictWriter(fh, fieldnames=COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: "" if r[c] is None else r[c] for c in COLUMNS})

    def to_json(self) -> dict:
        return {"schema_version": self.schema_version, "columns": list(COLUMNS),
                "load_seconds": self.load_seconds, "rows": self.rows,
                "aggregates": self.aggregates()}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def run_queries(index: BrePartitionIndex, queries, ks, modes, workers: int = 1) -> list[dict]:
    """Full cross product queries x k x modes; rows ordered by (query id, k, mode)."""
    Q = np.asarray(queries, dtype=np.float64)
    ks = [int(k) for k in ks]
    ps = [parse_mode(m) for m in modes]
    need_oracle = any(p is not None for p in ps)
    kmax = max(ks) if ks else 0
    pts = index.points() if need_oracle else None

    def one(qid):
        y = Q[qid]
        truth = linear_scan_oracle(pts, index.div, y, kmax) if need_oracle else None
        rows = []
        for k in ks:
            for mode, p in zip(modes, ps):
                t0 = time.perf_counter()
                if p is None:
                    items, rep = knn_search(index, y, k)
                else:
                    items, rep = approx_knn_search(index, y, k, p)
                us = (time.perf_counter() - t0) * 1e6
                if p is None:
                    ratio, rec = 1.0, 1.0
                else:
                    ratio = overall_ratio(items, truth[:k])
                    rec = recall(items, truth[:k])
                rows.append({"query_id": qid, "k": k, "mode": mode,
                             "candidates": rep.candidates, "pages_read": rep.pages_read,
                             "elapsed_us": round(us, 1), "overall_ratio": ratio, "recall": rec})
        return rows

    ids = range(Q.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            chunks = list(ex.map(one, ids))
    else:
        chunks = [one(i) for i in ids]
    return [r for chunk in chunks for r in chunk]


def bench_run(index_path, queries_path, ks, modes, out_path=None, workers: int = 1,
              query_format: str | None = None) -> BenchReport:
    """Load an index, run every query at every k and mode, write CSV and JSON."""
    from .datasets import load_matrix
    from .persistence import deserialize_index

    t0 = time.perf_counter()
    index = deserialize_index(index_path)
    load = time.perf_counter() - t0
    Q = load_matrix(queries_path, query_format)
    report = BenchReport(load_seconds=load)
    if Q.size == 0:
        log.warning("query file %s is empty; writing an empty report", queries_path)
    else:
        if Q.shape[1] != index.d:
            raise ValueError(f"queries have d={Q.shape[1]}, index has d={index.d}")
        report.rows = run_queries(index, Q, ks, modes, workers)
    if out_path is not None:
        report.write_csv(out_path)
        report.write_json(str(out_path).rsplit(".", 1)[0] + ".json")
    return report


def sweep_partitions(dataset, queries, config: SearchConfig, m_values, k: int = 20) -> list[dict]:
    """Build one index per M and record mean candidates, pages read and latency."""
    out = []
    for M in m_values:
        cfg = replace(config, partitions=int(M))
        t0 = time.perf_counter()
        index = build(dataset, cfg)
        built = time.perf_counter() - t0
        rows = run_queries(index, queries, [k], ["exact"])
        out.append({"M": int(M), "build_seconds": round(built, 3),
                    "mean_candidates": float(np.mean([r["candidates"] for r in rows])),
                    "mean_pages_read": float(np.mean([r["pages_read"] for r in rows])),
                    "mean_elapsed_us": float(np.mean([r["elapsed_us"] for r in rows]))})
    return out

