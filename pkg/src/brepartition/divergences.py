"""Separable Bregman divergences.

Every generator here is a sum of per-coordinate convex functions, so a
divergence over a vector splits into independent per-coordinate terms.
That property is what lets the index partition dimensions freely.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# e**t overflows float64 a little above 709.
EXP_LIMIT = 700.0


class DomainError(ValueError):
    """Input coordinate outside the generator's domain."""


class DivergenceKind(str, enum.Enum):
    SQUARED_EUCLIDEAN = "squared-euclidean"
    MAHALANOBIS = "diagonal-mahalanobis"
    ITAKURA_SAITO = "itakura-saito"
    EXPONENTIAL = "exponential"


CLI_NAMES = {
    "se": DivergenceKind.SQUARED_EUCLIDEAN,
    "mahalanobis": DivergenceKind.MAHALANOBIS,
    "isd": DivergenceKind.ITAKURA_SAITO,
    "exp": DivergenceKind.EXPONENTIAL,
}

# Stable integer codes used by the index file.
KIND_CODES = {
    DivergenceKind.SQUARED_EUCLIDEAN: 1,
    DivergenceKind.MAHALANOBIS: 2,
    DivergenceKind.ITAKURA_SAITO: 3,
    DivergenceKind.EXPONENTIAL: 4,
}


@dataclass(frozen=True, eq=False)
class Divergence:
    """A coordinate-separable Bregman divergence.

    ``weights`` is the diagonal of Q for the Mahalanobis case and must be
    None otherwise. ``floor`` is the smallest admissible coordinate for
    Itakura-Saito.
    """

    kind: DivergenceKind
    weights: np.ndarray | None = None
    floor: float = 1e-12
    clamp: bool = False
    _w: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        kind = DivergenceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DivergenceKind.MAHALANOBIS:
            if self.weights is None:
                raise ValueError("diagonal Mahalanobis needs per-dimension weights")
            w = np.array(self.weights, dtype=np.float64)
            if w.ndim == 2:
                off = w - np.diag(np.diag(w))
                if w.shape[0] != w.shape[1] or np.any(off != 0):
                    raise ValueError(
                        "only diagonal Q is supported; full-matrix Mahalanobis "
                        "is not coordinate-separable"
                    )
                w = np.diag(w).copy()
            if w.ndim != 1 or w.size == 0:
                raise ValueError("weights must be a vector of length d")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("Mahalanobis weights must be strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "_w", w)
        elif self.weights is not None:
            raise ValueError(f"{kind.value} takes no weights")
        if self.floor <= 0:
            raise ValueError("floor must be positive")

    @classmethod
    def from_name(cls, name: str, weights=None, **kw) -> "Divergence":
        kind = CLI_NAMES.get(name)
        if kind is None:
            kind = DivergenceKind(name)
        return cls(kind, weights=weights, **kw)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def dimension(self) -> int | None:
        """Required dimensionality, known only when weights are present."""
        return None if self._w is None else self._w.size

    def weights_for(self, dims=None):
        """Per-coordinate weight array for original dimension indices ``dims``.

        Returns the scalar 1.0 for unweighted divergences so it broadcasts.
        """
        if self._w is None:
            return 1.0
        if dims is None:
            return self._w
        return self._w[np.asarray(dims)]

    # -- domain ---------------------------------------------------------
    def in_domain(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        ok = np.isfinite(t)
        if self.kind is DivergenceKind.ITAKURA_SAITO:
            ok &= t > self.floor
        elif self.kind is DivergenceKind.EXPONENTIAL:
            ok &= np.abs(t) <= EXP_LIMIT
        return ok

    def validate(self, x, what: str = "input") -> np.ndarray:
        """Return ``x`` as float64, raising DomainError on the first bad coordinate.

        When the divergence was created with ``clamp=True`` Itakura-Saito
        coordinates at or below the floor are raised just above it instead.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.clamp and self.kind is DivergenceKind.ITAKURA_SAITO:
            x = np.where(np.isfinite(x), np.maximum(x, np.nextafter(self.floor, np.inf)), x)
        ok = self.in_domain(x)
        if not ok.all():
            bad = np.argwhere(~ok)[0]
            loc = ", ".join(str(int(i)) for i in bad)
            raise DomainError(
                f"{what}: coordinate ({loc}) = {x[tuple(bad)]!r} is outside the "
                f"{self.kind.value} domain"
            )
        if self._w is not None and x.ndim >= 1 and x.shape[-1] != self._w.size:
            raise ValueError(
                f"{what}: expected {self._w.size} coordinates, got {x.shape[-1]}"
            )
        return x

    # -- elementwise kernels (w is a broadcastable weight array) -------
    def f(self, t, w=1.0):
        k = self.kind
        if k is DivergenceKind.SQUARED_EUCLIDEAN:
            return t * t
        if k is DivergenceKind.MAHALANOBIS:
            return 0.5 * w * t * t
        if k is DivergenceKind.ITAKURA_SAITO:
            return -np.log(t)
        return np.exp(t)

    def grad(self, t, w=1.0):
        k = self.kind
        if k is DivergenceKind.SQUARED_EUCLIDEAN:
            return 2.0 * t
        if k is DivergenceKind.MAHALANOBIS:
            return w * t
        if k is DivergenceKind.ITAKURA_SAITO:
            return -1.0 / t
        return np.exp(t)

    def grad_inv(self, s, w=1.0):
        k = self.kind
        if k is DivergenceKind.SQUARED_EUCLIDEAN:
            return 0.5 * s
        if k is DivergenceKind.MAHALANOBIS:
            return s / w
        if k is DivergenceKind.ITAKURA_SAITO:
            return -1.0 / s
        return np.log(s)

    def terms(self, x, y, w=1.0):
        """Per-coordinate divergence terms, written in cancellation-free form."""
        k = self.kind
        if k is DivergenceKind.SQUARED_EUCLIDEAN:
            diff = x - y
            return diff * diff
        if k is DivergenceKind.MAHALANOBIS:
            diff = x - y
            return 0.5 * w * diff * diff
        if k is DivergenceKind.ITAKURA_SAITO:
            u = x / y
            return u - np.log(u) - 1.0
        diff = x - y
        return np.exp(y) * (np.expm1(diff) - diff)

    # -- vector distances ---------------------------------------------
    def distance(self, x, y, dims=None) -> float:
        """D_f(x, y) summed over all coordinates of two equal-length vectors."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
        return float(self.terms(x, y, self.weights_for(dims)).sum())

    def distances(self, X, y, dims=None) -> np.ndarray:
        """Row-wise D_f(X[i], y)."""
        return self.terms(X, y, self.weights_for(dims)).sum(axis=-1)

    def linear_form(self, y, w=1.0):
        """(g, const, const_abs) with D(x, y) = F(x) - <g, x> + const.

        ``const_abs`` bounds the magnitude of the pieces summed into
        ``const``; it feeds the rounding-error bound of LinearDistances.
        """
        y = np.asarray(y, dtype=np.float64)
        g = self.grad(y, w)
        fy = self.f(y, w)
        gy = g * y
        return g, float(gy.sum() - fy.sum()), float(np.abs(fy).sum() + np.abs(gy).sum())


# Rounding-error multiplier for the linear form; generous on purpose.
_ERR_FACTOR = 64 * np.finfo(np.float64).eps


class LinearDistances:
    """Fast row-wise divergences through one matrix-vector product.

    Uses precomputed per-row ``F(x) = sum f(x_i)``, ``sum |f(x_i)|`` and
    ``sum |x_i|`` (the last is computed when not given).
    The linear form suffers cancellation, so every fast value comes with a
    rounding-error bound; callers resolve rows whose comparison outcome is
    within the bound using the exact per-coordinate kernel.
    """

    def __init__(self, div: Divergence, X, F, F_abs, w=1.0, X_l1=None):
        self.div = div
        self.X = X
        self.F = F
        self.F_abs = F_abs
        self.w = w
        self.X_l1 = np.abs(X).sum(axis=1) if X_l1 is None else X_l1

    def bounds(self, y, rows=None):
        """(fast distance, error bound) arrays for ``rows`` (all when None)."""
        g, const, const_abs = self.div.linear_form(y, self.w)
        X = self.X if rows is None else self.X[rows]
        F = self.F if rows is None else self.F[rows]
        Fa = self.F_abs if rows is None else self.F_abs[rows]
        L1 = self.X_l1 if rows is None else self.X_l1[rows]
        fast = F - X @ g + const
        width = X.shape[1] + 4
        # sum |x_i g_i| <= max|g| * sum |x_i|
        err = _ERR_FACTOR * width * (Fa + L1 * np.abs(g).max() + const_abs) + 1e-300
        return fast, err

    def exact(self, y, rows):
        w = self.w
        if np.ndim(w):
            w = np.asarray(w)[None, :]
        return self.div.terms(self.X[rows], y, w).sum(axis=1)

    def within(self, y, r: float, rows=None) -> np.ndarray:
        """Boolean mask of rows with D(x, y) <= r, exact w.r.t. ``terms``."""
        fast, err = self.bounds(y, rows)
        inside = fast + err <= r
        unsure = np.flatnonzero(~inside & (fast - err <= r))
        if unsure.size:
            idx = unsure if rows is None else np.asarray(rows)[unsure]
            inside[unsure] = self.exact(y, idx) <= r
        return inside


def _check_scalar(spec: Divergence, dim_index: int, t: float) -> float:
    if spec.dimension is not None and not 0 <= dim_index < spec.dimension:
        raise IndexError(f"dimension {dim_index} out of range")
    if not spec.in_domain(t):
        raise DomainError(
            f"coordinate {dim_index} = {t!r} is outside the {spec.kind.value} domain"
        )
    return float(t)


def _weight(spec: Divergence, i: int) -> float:
    return 1.0 if spec.dimension is None else float(spec.weights_for([i])[0])


def generator_value(spec: Divergence, dim_index: int, t: float) -> float:
    t = _check_scalar(spec, dim_index, t)
    return float(spec.f(t, _weight(spec, dim_index)))


def generator_grad(spec: Divergence, dim_index: int, t: float) -> float:
    t = _check_scalar(spec, dim_index, t)
    return float(spec.grad(t, _weight(spec, dim_index)))


def generator_grad_inverse(spec: Divergence, dim_index: int, s: float) -> float:
    s = float(s)
    k = spec.kind
    if not np.isfinite(s):
        raise DomainError(f"gradient value {s!r} is not finite")
    if k is DivergenceKind.ITAKURA_SAITO and s >= 0:
        raise DomainError(f"{s!r} is outside the range of -1/t (needs s < 0)")
    if k is DivergenceKind.EXPONENTIAL and s <= 0:
        raise DomainError(f"{s!r} is outside the range of exp (needs s > 0)")
    if spec.dimension is not None and not 0 <= dim_index < spec.dimension:
        raise IndexError(f"dimension {dim_index} out of range")
    w = _weight(spec, dim_index)
    return float(spec.grad_inv(s, w))


def bregman_distance(spec: Divergence, x, y, dim_offsets=None) -> float:
    """D_f(x, y); ``dim_offsets`` maps sub-vector positions to original dims."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if dim_offsets is None and spec.dimension is not None and x.size != spec.dimension:
        raise ValueError("sub-vector of a weighted divergence needs dim_offsets")
    spec.validate(x, "x") if dim_offsets is None else _validate_sub(spec, x, "x")
    spec.validate(y, "y") if dim_offsets is None else _validate_sub(spec, y, "y")
    return spec.distance(x, y, dim_offsets)


def _validate_sub(spec: Divergence, v, what):
    ok = spec.in_domain(v)
    if not ok.all():
        i = int(np.argmin(ok))
        raise DomainError(f"{what}: coordinate {i} = {v[i]!r} is outside the domain")
