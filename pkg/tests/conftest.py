import numpy as np
import pytest

from brepartition.divergences import Divergence

NAMES = ("se", "mahalanobis", "isd", "exp")


def make_div(name, d=None, rng=None):
    if name == "mahalanobis":
        rng = rng or np.random.default_rng(7)
        return Divergence.from_name(name, weights=rng.uniform(0.5, 2.0, d))
    return Divergence.from_name(name)


def sample_points(name, rng, n, d):
    """Random points inside the divergence's domain, float32-representable."""
    if name == "isd":
        X = rng.uniform(0.5, 5.0, (n, d))
    elif name == "exp":
        X = rng.uniform(-2.0, 2.0, (n, d))
    else:
        X = rng.standard_normal((n, d))
    return X.astype(np.float32).astype(np.float64)


def reference_distance(name, x, y, w=None):
    """D(x, y) = f(x) - f(y) - f'(y)(x - y), summed; plain textbook form."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if name == "se":
        f, g = (lambda t: t * t), (lambda t: 2 * t)
    elif name == "mahalanobis":
        f, g = (lambda t: 0.5 * w * t * t), (lambda t: w * t)
    elif name == "isd":
        f, g = (lambda t: -np.log(t)), (lambda t: -1 / t)
    else:
        f, g = np.exp, np.exp
    return (f(x) - f(y) - g(y) * (x - y)).sum(axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
