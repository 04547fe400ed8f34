import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brepartition.bounds import PartitionLayout
from brepartition.divergences import Divergence
from brepartition.planner import (ALPHA_CAP, CostParams, closed_form_partitions,
                                  correlation_matrix, fit_cost_params, fit_exponential,
                                  modeled_cost, optimal_partitions, pccp, pccp_groups, pearson)


def scan_argmin(p: CostParams) -> int:
    """Independent brute-force oracle: integer M in 1..d with the smallest T(M)."""
    best, best_m = math.inf, None
    for M in range(1, p.d + 1):
        t = p.d + 2 * M * p.n + p.beta * p.A * p.alpha**M * p.n * p.d
        if t < best:
            best, best_m = t, M
    return best_m


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert pearson([5, 5, 5], [1, 7, 2]) == 0.0
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


def test_correlation_matrix_matches_numpy(rng):
    X = rng.standard_normal((300, 7))
    X[:, 3] = 2.0
    r = correlation_matrix(X)
    ref = np.corrcoef(np.delete(X, 3, axis=1), rowvar=False)
    np.testing.assert_allclose(np.delete(np.delete(r, 3, 0), 3, 1), ref, atol=1e-12)
    assert np.all(r[3] == 0) and np.all(r[:, 3] == 0)
    np.testing.assert_allclose(r, r.T)


def fig4_data(rng, n=2000):
    """Six dims a..f: a~e~f strongly correlated, b~c~d moderately, no cross terms."""
    base = rng.standard_normal(n)
    a = base + 0.1 * rng.standard_normal(n)
    e = base + 0.1 * rng.standard_normal(n)
    f = e + 0.1 * rng.standard_normal(n)
    b, c, d = rng.standard_normal(n) + rng.standard_normal((3, n))
    return np.stack([a, b, c, d, e, f], axis=1)


def test_pccp_fig4_style_example(rng):
    X = fig4_data(rng)
    for seed in range(10):
        groups = pccp_groups(X, 3, seed)
        sets = sorted(map(frozenset, groups), key=min)
        assert set(map(frozenset, groups)) == {frozenset({0, 4, 5}), frozenset({1, 2, 3})}, sets
        lay = pccp(X, 3, seed)
        for i in range(3):
            dims = set(lay.dims(i).tolist())
            assert len(dims & {0, 4, 5}) == 1 and len(dims & {1, 2, 3}) == 1


def test_pccp_degenerate_m(rng):
    X = rng.standard_normal((100, 5))
    one = pccp(X, 1, 0)
    assert one.M == 1 and sorted(one.perm.tolist()) == list(range(5))
    full = pccp(X, 5, 0)
    assert full.widths == [1] * 5
    with pytest.raises(ValueError):
        pccp(X, 6, 0)


def test_pccp_greedy_invariant_by_replay(rng):
    X = rng.standard_normal((400, 13)) @ rng.standard_normal((13, 13))
    r = np.abs(np.corrcoef(X, rowvar=False))
    groups = pccp_groups(X, 4, seed=3)
    assigned = set()
    for g in groups:
        assigned.add(g[0])
        for j, dim in enumerate(g[1:], start=1):
            left = [i for i in range(13) if i not in assigned]
            score = {i: max(r[i, m] for m in g[:j]) for i in left}
            assert score[dim] >= max(score.values()) - 1e-12
            assigned.add(dim)


def test_pccp_constant_dims_last(rng):
    X = rng.standard_normal((200, 6))
    X[:, [1, 4]] = 3.0
    groups = pccp_groups(X, 3, 0)
    flat = [d for g in groups for d in g]
    assert set(flat[-2:]) == {1, 4}


@given(st.integers(2, 40), st.data())
@settings(max_examples=40, deadline=None)
def test_pccp_layout_valid_and_balanced(d, data):
    M = data.draw(st.integers(1, d))
    X = np.random.default_rng(d).standard_normal((50, d))
    lay = pccp(X, M, data.draw(st.integers(0, 100)))
    assert lay.M == M
    assert sorted(lay.perm.tolist()) == list(range(d))
    assert max(lay.widths) - min(lay.widths) <= 1


def test_fit_exponential_examples():
    A, alpha = fit_exponential([1, 2], [90, 81])
    assert A == pytest.approx(100.0) and alpha == pytest.approx(0.9)
    ms = np.arange(1, 20)
    A, alpha = fit_exponential(ms, 100 * 0.9**ms)
    assert A == pytest.approx(100, rel=0.01) and alpha == pytest.approx(0.9, rel=0.01)


def test_fit_cost_params_deterministic_and_sane(rng):
    X = rng.standard_normal((2000, 16))
    div = Divergence.from_name("se")
    a = fit_cost_params(X, div, 20, seed=4)
    b = fit_cost_params(X, div, 20, seed=4)
    assert a == b
    assert 0 < a.alpha < 1 and a.A > 0 and a.beta > 0
    assert (a.n, a.d) == (2000, 16)


def test_fit_cost_params_saturated_beta():
    # identical rows: every record lies within every bound, so the covered
    # fraction is 1 and beta is 1 / mean(UB)
    X = np.tile([1.0, 2.0, 3.0, 4.0], (50, 1))
    div = Divergence.from_name("se")
    p = fit_cost_params(X, div, 10, seed=0)
    lays = [PartitionLayout.contiguous(4, m) for m in (1, 2, 4)]
    y = X[0]
    from brepartition.bounds import p_table, q_table, ub_table
    ubs = [ub_table(p_table(y[None], lay, div), q_table(y, lay, div)).sum() for lay in lays]
    assert p.beta == pytest.approx(1 / np.mean(ubs))
    assert p.degenerate and p.alpha == ALPHA_CAP


def test_cost_params_validation():
    with pytest.raises(ValueError):
        CostParams(A=1, alpha=1.0, beta=1, n=1, d=1)
    with pytest.raises(ValueError):
        CostParams(A=0, alpha=0.5, beta=1, n=1, d=1)
    p = CostParams(A=10, alpha=0.5, beta=1, n=10, d=3)
    assert p.candidate_fraction(0) == 1.0
    assert p.mu == 100


def test_worked_example():
    p = CostParams(A=1e4, alpha=0.9, beta=1e-4, n=50_000, d=200)
    assert closed_form_partitions(p) == pytest.approx(22.35, abs=0.01)
    m = optimal_partitions(p)
    assert m in (22, 23)
    assert m == scan_argmin(p)
    assert modeled_cost(p, m) <= min(modeled_cost(p, 22), modeled_cost(p, 23))


def test_undefined_closed_form_falls_back_to_scan():
    p = CostParams(A=1e-3, alpha=0.999999, beta=1e-6, n=1000, d=50)
    assert closed_form_partitions(p) is None
    assert optimal_partitions(p) == scan_argmin(p) == 1


def test_planning_forces_k_one():
    p = CostParams(A=1e4, alpha=0.9, beta=1e-4, n=50_000, d=200, k=50)
    assert optimal_partitions(p) == optimal_partitions(
        CostParams(A=1e4, alpha=0.9, beta=1e-4, n=50_000, d=200))


@given(st.floats(1, 1e6), st.floats(0.05, 0.999), st.floats(1e-8, 1e-1),
       st.integers(10, 10**6), st.integers(1, 400))
@settings(max_examples=300, deadline=None)
def test_optimal_matches_scan(A, alpha, beta, n, d):
    p = CostParams(A=A, alpha=alpha, beta=beta, n=n, d=d)
    m = optimal_partitions(p)
    costs = [modeled_cost(p, M) for M in range(1, d + 1)]
    assert modeled_cost(p, m) == min(costs)
