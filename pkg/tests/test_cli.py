import csv
import io
import json

import numpy as np
import pytest

from brepartition.cli import main
from brepartition.datasets import read_fvecs, write_fvecs
from brepartition.divergences import Divergence
from brepartition.search import linear_scan_oracle


@pytest.fixture
def data(tmp_path, rng):
    X = rng.uniform(0.5, 3.0, (400, 8)).astype(np.float32)
    write_fvecs(tmp_path / "x.fvecs", X)
    return tmp_path, X


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_build_query_stats(data, capsys):
    tmp, X = data
    code, out, _ = run(capsys, "build", "--input", tmp / "x.fvecs", "--divergence", "isd",
                       "--partitions", "2", "--pccp", "off", "--out", tmp / "i.bbf")
    assert code == 0 and json.loads(out)["M"] == 2
    np.savetxt(tmp / "q.csv", X[:3], delimiter=",")
    code, out, _ = run(capsys, "query", "--index", tmp / "i.bbf", "--queries", tmp / "q.csv",
                       "--k", 4)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 12
    div = Divergence.from_name("isd")
    truth = linear_scan_oracle(X, div, X[1].astype(np.float64), 4)
    got = [r for r in rows if r["query_id"] == "1"]
    assert [int(r["record_id"]) for r in got] == [t.record_id for t in truth]
    assert float(got[0]["distance"]) == 0.0
    code, out, _ = run(capsys, "stats", "--index", tmp / "i.bbf")
    h = json.loads(out)
    assert code == 0 and h["n"] == 400 and h["d"] == 8 and h["M"] == 2


def test_mahalanobis_weights(data, capsys):
    tmp, _ = data
    np.savetxt(tmp / "w.csv", np.linspace(0.5, 2, 8)[None], delimiter=",")
    code, _, _ = run(capsys, "build", "--input", tmp / "x.fvecs", "--divergence", "mahalanobis",
                     "--weights", tmp / "w.csv", "--partitions", "auto", "--fit-samples", 10,
                     "--out", tmp / "m.bbf")
    assert code == 0
    np.savetxt(tmp / "bad.csv", -np.ones((1, 8)), delimiter=",")
    code, _, err = run(capsys, "build", "--input", tmp / "x.fvecs", "--divergence",
                       "mahalanobis", "--weights", tmp / "bad.csv", "--out", tmp / "b.bbf")
    assert code == 2 and "error" in err


def test_bench_and_sample(data, capsys):
    tmp, _ = data
    code, out, _ = run(capsys, "sample-queries", "--input", tmp / "x.fvecs", "--count", 50,
                       "--seed", 1, "--out", tmp / "q.fvecs", "--rest", tmp / "rest.fvecs")
    assert code == 0 and json.loads(out) == {"queries": 50, "rest": 350}
    assert read_fvecs(tmp / "rest.fvecs").shape == (350, 8)
    run(capsys, "build", "--input", tmp / "rest.fvecs", "--divergence", "isd",
        "--out", tmp / "i.bbf")
    code, out, _ = run(capsys, "bench", "--index", tmp / "i.bbf", "--queries", tmp / "q.fvecs",
                       "--k", "5,10", "--modes", "exact,approx:0.9", "--out", tmp / "r.csv")
    assert code == 0 and json.loads(out)["rows"] == 200
    assert (tmp / "r.json").exists()


def test_sweep(data, capsys):
    tmp, _ = data
    code, out, _ = run(capsys, "sweep-m", "--input", tmp / "x.fvecs", "--divergence", "se",
                       "--min", 1, "--max", 8, "--query-count", 5, "--k", 5)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["M"] for r in rows] == ["1", "2", "4", "8"]


def test_errors(data, capsys, tmp_path):
    tmp, X = data
    (tmp / "junk.bbf").write_bytes(b"NOPE" + bytes(200))
    code, _, err = run(capsys, "stats", "--index", tmp / "junk.bbf")
    assert code == 2 and "magic" in err.lower()
    write_fvecs(tmp / "neg.fvecs", -X)
    code, _, err = run(capsys, "build", "--input", tmp / "neg.fvecs", "--divergence", "isd",
                       "--out", tmp / "n.bbf")
    assert code == 2
    code, _, _ = run(capsys, "build", "--input", tmp / "neg.fvecs", "--divergence", "isd",
                     "--isd-clamp", "--out", tmp / "n.bbf")
    assert code == 0
    with pytest.raises(SystemExit):
        main(["build", "--input", "x", "--divergence", "kl", "--out", "y"])
