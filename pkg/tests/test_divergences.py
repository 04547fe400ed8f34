import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brepartition.divergences import (Divergence, DomainError, LinearDistances, bregman_distance,
                                      generator_grad, generator_grad_inverse, generator_value)

from conftest import NAMES, make_div, reference_distance, sample_points

SE = Divergence.from_name("se")
ISD = Divergence.from_name("isd")
EXP = Divergence.from_name("exp")


@pytest.mark.parametrize("div,t,expected", [
    (SE, 2.0, 4.0),
    (ISD, 1.0, 0.0),
    (EXP, 1.0, 2.718281828459045),
])
def test_generator_value_examples(div, t, expected):
    assert generator_value(div, 0, t) == pytest.approx(expected, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("div,t,expected", [(SE, 3.0, 6.0), (ISD, 2.0, -0.5), (EXP, 0.0, 1.0)])
def test_generator_grad_examples(div, t, expected):
    assert generator_grad(div, 0, t) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("div,s,expected", [(SE, 6.0, 3.0), (ISD, -0.5, 2.0), (EXP, 1.0, 0.0)])
def test_generator_grad_inverse_examples(div, s, expected):
    assert generator_grad_inverse(div, 0, s) == pytest.approx(expected, abs=1e-15)


def test_mahalanobis_weighted_generator():
    div = Divergence.from_name("mahalanobis", weights=[2.0, 4.0])
    assert generator_value(div, 1, 3.0) == pytest.approx(0.5 * 4.0 * 9.0)
    assert generator_grad(div, 0, 3.0) == pytest.approx(6.0)
    assert generator_grad_inverse(div, 1, 8.0) == pytest.approx(2.0)
    with pytest.raises(IndexError):
        generator_value(div, 2, 1.0)


def test_domain_errors_name_the_coordinate():
    with pytest.raises(DomainError, match="coordinate 3"):
        generator_value(ISD, 3, 0.0)
    with pytest.raises(DomainError):
        generator_grad(ISD, 0, -1.0)
    with pytest.raises(DomainError):
        generator_value(EXP, 0, 1000.0)
    with pytest.raises(DomainError):
        generator_grad_inverse(ISD, 0, 0.5)
    with pytest.raises(DomainError):
        generator_grad_inverse(EXP, 0, -1.0)
    with pytest.raises(DomainError, match=r"\(1\)"):
        bregman_distance(ISD, [1.0, -2.0], [1.0, 1.0])


def test_bregman_distance_examples():
    assert bregman_distance(SE, [1, 2], [3, 4]) == pytest.approx(8.0)
    # 1/2 - log(1/2) - 1
    assert bregman_distance(ISD, [1.0], [2.0]) == pytest.approx(0.1931471806, rel=1e-9)
    assert bregman_distance(EXP, [0.3, -1.2], [0.3, -1.2]) == 0.0


def test_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        bregman_distance(SE, [1, 2], [1, 2, 3])


def test_full_q_rejected_diagonal_accepted():
    with pytest.raises(ValueError, match="diagonal"):
        Divergence.from_name("mahalanobis", weights=[[1.0, 0.1], [0.1, 1.0]])
    d = Divergence.from_name("mahalanobis", weights=np.diag([1.0, 3.0]))
    assert list(d.weights) == [1.0, 3.0]
    with pytest.raises(ValueError):
        Divergence.from_name("mahalanobis", weights=[1.0, 0.0])
    with pytest.raises(ValueError):
        Divergence.from_name("mahalanobis")
    with pytest.raises(ValueError):
        Divergence.from_name("se", weights=[1.0])


def test_isd_floor_and_clamp():
    with pytest.raises(DomainError):
        ISD.validate(np.array([1.0, 1e-13]))
    clamped = Divergence.from_name("isd", clamp=True).validate(np.array([1.0, 0.0, -3.0]))
    assert np.all(clamped > 1e-12)
    assert clamped[0] == 1.0


def test_weighted_subvector_needs_offsets():
    div = Divergence.from_name("mahalanobis", weights=[1.0, 2.0, 3.0])
    x, y = np.array([1.0, 2.0]), np.array([0.0, 0.0])
    with pytest.raises(ValueError):
        bregman_distance(div, x, y)
    # dims 0 and 2: 0.5 * (1*1 + 3*4)
    assert bregman_distance(div, x, y, dim_offsets=[0, 2]) == pytest.approx(6.5)


@pytest.mark.parametrize("name", NAMES)
def test_matches_textbook_formula(name, rng):
    X = sample_points(name, rng, 2000, 6)
    Y = sample_points(name, rng, 2000, 6)
    div = make_div(name, 6)
    w = div.weights if name == "mahalanobis" else None
    got = div.terms(X, Y, div.weights_for()).sum(axis=1)
    ref = reference_distance(name, X, Y, w)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("name", NAMES)
def test_non_negative_and_identity(name, rng):
    d = 5
    div = make_div(name, d)
    X = sample_points(name, rng, 100_000, d)
    Y = sample_points(name, rng, 100_000, d)
    assert div.distances(X, Y).min() >= -1e-12
    assert np.abs(div.distances(X, X)).max() <= 1e-12


@pytest.mark.parametrize("name", NAMES)
def test_separability(name, rng):
    d = 9
    div = make_div(name, d)
    X = sample_points(name, rng, 500, d)
    Y = sample_points(name, rng, 500, d)
    for _ in range(20):
        mask = rng.random(d) < 0.5
        a, b = np.flatnonzero(mask), np.flatnonzero(~mask)
        parts = div.distances(X[:, a], Y[:, a], a) + div.distances(X[:, b], Y[:, b], b)
        np.testing.assert_allclose(parts, div.distances(X, Y), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_gradient_finite_differences(name, rng):
    div = make_div(name, 1)
    ts = sample_points(name, rng, 1000, 1).ravel()
    for t in ts:
        h = 1e-5 * max(1.0, abs(t))
        fd = (generator_value(div, 0, t + h) - generator_value(div, 0, t - h)) / (2 * h)
        assert fd == pytest.approx(generator_grad(div, 0, t), rel=1e-6)


@pytest.mark.parametrize("name", NAMES)
def test_grad_inverse_round_trip(name, rng):
    div = make_div(name, 1)
    for t in sample_points(name, rng, 1000, 1).ravel():
        back = generator_grad_inverse(div, 0, generator_grad(div, 0, t))
        assert back == pytest.approx(t, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_strict_convexity(name, rng):
    div = make_div(name, 1)
    ab = np.sort(sample_points(name, rng, 1000, 2), axis=1)
    a, b = ab[:, 0], ab[:, 1]
    ok = b > a
    f = lambda t: div.f(t, div.weights_for([0]))
    assert np.all(f((a + b)[ok] / 2) < (f(a) + f(b))[ok] / 2)


@pytest.mark.parametrize("name", NAMES)
def test_linear_distances_resolve_exactly(name, rng):
    d = 12
    div = make_div(name, d)
    X = sample_points(name, rng, 3000, d)
    fx = div.f(X, div.weights_for())
    lin = LinearDistances(div, X, fx.sum(axis=1), np.abs(fx).sum(axis=1), div.weights_for())
    exact = div.distances(X, X[0])
    fast, err = lin.bounds(X[0])
    assert np.all(np.abs(fast - exact) <= err)
    for r in np.quantile(exact, [0.0, 0.1, 0.5, 0.9]):
        np.testing.assert_array_equal(lin.within(X[0], r), exact <= r)


finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(1e-3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(positive, positive), min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_isd_property_non_negative(pairs):
    x, y = np.array(pairs).T
    v = bregman_distance(ISD, x, y)
    assert v >= -1e-12
    assert math.isfinite(v)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_exp_matches_textbook(pairs):
    x, y = np.array(pairs).T
    got = bregman_distance(EXP, x, y)
    assert got == pytest.approx(reference_distance("exp", x, y), rel=1e-9, abs=1e-9)
