"""Command-line entry point: build, query, bench, sweep-m, stats, sample-queries."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

from .bench import bench_run, sweep_partitions
from .datasets import load_matrix, sample_queries, save_matrix
from .divergences import CLI_NAMES, Divergence
from .pagestore import DEFAULT_PAGE_SIZE
from .persistence import IndexFormatError, deserialize_index, read_header, serialize_index
from .search import DEFAULT_LEAF_CAPACITY, SearchConfig, approx_knn_search, build, knn_search

log = logging.getLogger("brepartition")


def _partitions(s: str):
    if s == "auto":
        return s
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("partitions must be 'auto' or a positive integer")
    return v


def _on_off(s: str) -> bool:
    if s not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return s == "on"


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x]


def _add_dataset_args(p):
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["fvecs", "csv"])
    p.add_argument("--has-header", action="store_true", help="skip the first CSV line")


def _add_build_args(p):
    p.add_argument("--divergence", choices=sorted(CLI_NAMES), required=True)
    p.add_argument("--weights", help="file holding the d Mahalanobis weights")
    p.add_argument("--isd-clamp", action="store_true",
                   help="raise Itakura-Saito coordinates at or below the floor instead of failing")
    p.add_argument("--partitions", type=_partitions, default="auto")
    p.add_argument("--pccp", type=_on_off, default=True)
    p.add_argument("--leaf-capacity", type=int, default=DEFAULT_LEAF_CAPACITY)
    p.add_argument("--page-size", type=int, default=DEFAULT_PAGE_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fit-samples", type=int, default=50,
                   help="sample pairs used to fit the cost model when --partitions auto")
    p.add_argument("--workers", type=int, default=1)


def _config(args) -> SearchConfig:
    weights = load_matrix(args.weights).ravel() if args.weights else None
    div = Divergence.from_name(args.divergence, weights=weights, clamp=args.isd_clamp)
    return SearchConfig(div, partitions=args.partitions, pccp=args.pccp,
                        leaf_capacity=args.leaf_capacity, page_size=args.page_size,
                        seed=args.seed, fit_samples=args.fit_samples,
                        workers=args.workers)


def cmd_build(args) -> int:
    X = load_matrix(args.input, args.format, args.has_header)
    t0 = time.perf_counter()
    index = build(X, _config(args))
    built = time.perf_counter() - t0
    size = serialize_index(index, args.out)
    print(json.dumps({"n": index.n, "d": index.d, "M": index.M, "build_seconds": round(built, 3),
                      "bytes": size, "out": args.out}))
    return 0


def cmd_query(args) -> int:
    index = deserialize_index(args.index)
    Q = load_matrix(args.queries, args.format)
    w = csv.writer(sys.stdout)
    w.writerow(["query_id", "rank", "record_id", "distance"])
    for qid, y in enumerate(Q):
        if args.approx is None:
            items, _ = knn_search(index, y, args.k)
        else:
            items, _ = approx_knn_search(index, y, args.k, args.approx)
        for rank, it in enumerate(items):
            w.writerow([qid, rank, it.record_id, repr(it.distance)])
    return 0


def cmd_bench(args) -> int:
    report = bench_run(args.index, args.queries, args.k, args.modes.split(","), args.out,
                       workers=args.workers, query_format=args.format)
    print(json.dumps({"load_seconds": report.load_seconds, "rows": len(report.rows),
                      "aggregates": report.aggregates()}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    X = load_matrix(args.input, args.format, args.has_header)
    if args.queries:
        Q = load_matrix(args.queries)
    else:
        Q, X = sample_queries(X, args.query_count, args.seed)
    ms = []
    m = args.min
    while m <= min(args.max, X.shape[1]):
        ms.append(m)
        m *= 2
    rows = sweep_partitions(X, Q, _config(args), ms, args.k)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else ["M"])
    w.writeheader()
    w.writerows(rows)
    return 0


def cmd_stats(args) -> int:
    h = read_header(args.index)
    h["bounds"] = [list(b) for b in h["bounds"]]
    h["perm"] = h["perm"].tolist()
    print(json.dumps(h, indent=2))
    return 0


def cmd_sample(args) -> int:
    X = load_matrix(args.input, args.format, args.has_header)
    Q, rest = sample_queries(X, args.count, args.seed)
    save_matrix(args.out, Q)
    if args.rest:
        save_matrix(args.rest, rest)
    print(json.dumps({"queries": int(Q.shape[0]), "rest": int(rest.shape[0])}))
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brepartition",
                                 description="kNN search under separable Bregman divergences")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build an index file")
    _add_dataset_args(p)
    _add_build_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="answer kNN queries, CSV on stdout")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--format", choices=["fvecs", "csv"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--approx", type=float, metavar="P")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="run queries x k x modes and write a report")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--format", choices=["fvecs", "csv"])
    p.add_argument("--k", type=_int_list, default=[20, 40, 60, 80, 100])
    p.add_argument("--modes", default="exact")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-m", help="pages read and candidates over M = min, 2 min, ... max")
    _add_dataset_args(p)
    _add_build_args(p)
    p.add_argument("--queries")
    p.add_argument("--query-count", type=int, default=50)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--min", type=int, default=1)
    p.add_argument("--max", type=int, default=64)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="print the index header")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample-queries", help="split off held-out query rows")
    _add_dataset_args(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--rest", help="where to write the remaining rows")
    p.set_defaults(func=cmd_sample)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IndexFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
