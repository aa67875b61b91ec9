"""Poincare-ball and Klein-model operations in double precision.

Array functions operate on the last axis and broadcast over the leading
ones. ``PoincareVector`` and ``KleinVector`` wrap a single point together
with its curvature and check the ball invariant on construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation

ATANH_EPS = 1e-7
MIN_NORM = 1e-15
BOUNDARY_EPS = 1e-5
GROMOV_EXACT_LIMIT = 30


def _check_c(c: float) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise ContractViolation(f"curvature must be positive and finite, got {c}")
    return c


def _check_pair(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape[-1] != v.shape[-1]:
        raise ContractViolation(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sqnorm(x))


def _atanh(x: np.ndarray) -> np.ndarray:
    return np.arctanh(np.clip(x, -1 + ATANH_EPS, 1 - ATANH_EPS))


def project(x: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Pull points with c*|x|^2 >= 1 back to radius (1 - 1e-5)/sqrt(c)."""
    c = _check_c(c)
    x = np.asarray(x, dtype=np.float64)
    sq = _sqnorm(x)
    outside = c * sq >= 1.0
    if not np.any(outside):
        return x
    maxnorm = (1.0 - BOUNDARY_EPS) / np.sqrt(c)
    norm = np.maximum(np.sqrt(sq), MIN_NORM)
    return np.where(outside, x / norm * maxnorm, x)


def mobius_add(u, v, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_pair(u, v)
    uv = np.sum(u * v, axis=-1, keepdims=True)
    u2 = _sqnorm(u)
    v2 = _sqnorm(v)
    num = (1 + 2 * c * uv + c * v2) * u + (1 - c * u2) * v
    den = 1 + 2 * c * uv + c**2 * u2 * v2
    return project(num / np.maximum(den, MIN_NORM), c)


def mobius_scalar_mul(w: float, u, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    u = np.asarray(u, dtype=np.float64)
    sqrt_c = np.sqrt(c)
    norm = _norm(u)
    safe = np.maximum(norm, MIN_NORM)
    scaled = np.tanh(w * _atanh(sqrt_c * norm)) / sqrt_c
    out = np.where(norm > 0, scaled * u / safe, 0.0)
    return project(out, c)


def geodesic_distance(u, v, c: float = 1.0) -> np.ndarray:
    """Geodesic distance; returns a scalar for single points."""
    c = _check_c(c)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_pair(u, v)
    sqrt_c = np.sqrt(c)
    w = mobius_add(-u, v, c)
    arg = np.clip(sqrt_c * _norm(w), 0.0, 1 - ATANH_EPS)
    return (2.0 / sqrt_c * np.arctanh(arg))[..., 0]


def exp_map_origin(v, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ContractViolation("exp_map_origin needs finite input")
    sqrt_c = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    out = np.where(norm > 0, np.tanh(sqrt_c * norm) * v / (sqrt_c * safe), 0.0)
    return project(out, c)


def log_map_origin(y, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    y = np.asarray(y, dtype=np.float64)
    sqrt_c = np.sqrt(c)
    norm = _norm(y)
    safe = np.maximum(norm, MIN_NORM)
    return np.where(norm > 0, _atanh(sqrt_c * norm) * y / (sqrt_c * safe), 0.0)


def poincare_to_klein(u, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    u = np.asarray(u, dtype=np.float64)
    return 2 * u / (1 + c * _sqnorm(u))


def klein_to_poincare(k, c: float = 1.0) -> np.ndarray:
    c = _check_c(c)
    k = np.asarray(k, dtype=np.float64)
    gap = np.maximum(1 - c * _sqnorm(k), 0.0)
    return project(k / (1 + np.sqrt(gap)), c)


def lorentz_factor(k, c: float = 1.0) -> np.ndarray:
    """Klein-model gamma factor 1/sqrt(1 - c|k|^2); scalar for a single point."""
    c = _check_c(c)
    k = np.asarray(k, dtype=np.float64)
    gap = np.maximum(1 - c * _sqnorm(k), MIN_NORM)
    return (1 / np.sqrt(gap))[..., 0]


def einstein_midpoint(points, c: float = 1.0, weights=None) -> np.ndarray:
    """Hyperbolic average of Poincare points, computed in Klein coordinates.

    ``points`` has shape (m, d). Optional non-negative ``weights`` multiply
    the Lorentz factors.
    """
    c = _check_c(c)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ContractViolation("einstein_midpoint needs a non-empty (m, d) array")
    k = poincare_to_klein(pts, c)
    gamma = lorentz_factor(k, c)
    if weights is not None:
        gamma = gamma * np.asarray(weights, dtype=np.float64)
    mean_k = (gamma[:, None] * k).sum(axis=0) / np.maximum(gamma.sum(), MIN_NORM)
    return klein_to_poincare(mean_k, c)


def clip_features(x, r: float) -> np.ndarray:
    if r <= 0:
        raise ContractViolation(f"clip radius must be positive, got {r}")
    x = np.asarray(x, dtype=np.float64)
    norm = _norm(x)
    scale = np.minimum(1.0, r / np.maximum(norm, MIN_NORM))
    return np.where(norm > 0, scale * x, 0.0)


def _quadruple_deltas(dist: np.ndarray, quads: np.ndarray) -> np.ndarray:
    a, b, c, d = quads.T
    sums = np.stack(
        [dist[a, b] + dist[c, d], dist[a, c] + dist[b, d], dist[a, d] + dist[b, c]],
        axis=1,
    )
    sums.sort(axis=1)
    return (sums[:, 2] - sums[:, 1]) / 2


def gromov_delta(
    points: Sequence,
    metric: Callable | None = None,
    sample_quadruples: int = 10_000,
    seed: int = 0,
) -> float:
    """Four-point Gromov delta, maximised over quadruples.

    All quadruples are enumerated when there are at most 30 points;
    otherwise ``sample_quadruples`` random quadruples of distinct points
    are drawn with ``seed``. ``metric`` defaults to Euclidean distance.
    """
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    n = len(pts)
    if n < 4:
        raise ContractViolation(f"gromov_delta needs at least 4 points, got {n}")
    if metric is None:
        arr = np.stack(pts)
        dist = np.sqrt(np.maximum(_sqnorm(arr[:, None, :] - arr[None, :, :])[..., 0], 0))
    else:
        dist = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            dist[i, j] = dist[j, i] = float(metric(pts[i], pts[j]))
    if n <= GROMOV_EXACT_LIMIT:
        quads = np.array(list(itertools.combinations(range(n), 4)))
    else:
        rng = np.random.default_rng(seed)
        quads = np.array(
            [rng.choice(n, size=4, replace=False) for _ in range(sample_quadruples)]
        )
    return float(_quadruple_deltas(dist, quads).max())


@dataclass(frozen=True, eq=False)
class PoincareVector:
    """A single point of the Poincare ball with curvature ``c``."""

    components: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        comps = np.array(self.components, dtype=np.float64).reshape(-1)
        c = _check_c(self.c)
        if comps.size == 0 or not np.all(np.isfinite(comps)):
            raise ContractViolation("components must be a non-empty finite vector")
        if c * float(comps @ comps) >= 1:
            raise ContractViolation("point lies outside the Poincare ball")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def _same_space(self, other: "PoincareVector") -> None:
        if not isinstance(other, PoincareVector):
            raise ContractViolation(f"expected PoincareVector, got {type(other).__name__}")
        if other.c != self.c:
            raise ContractViolation(f"curvature mismatch: {self.c} vs {other.c}")
        if other.dim != self.dim:
            raise ContractViolation(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "PoincareVector") -> "PoincareVector":
        self._same_space(other)
        return PoincareVector(mobius_add(self.components, other.components, self.c), self.c)

    def __neg__(self) -> "PoincareVector":
        return PoincareVector(-self.components, self.c)

    def __rmul__(self, w: float) -> "PoincareVector":
        return PoincareVector(mobius_scalar_mul(float(w), self.components, self.c), self.c)

    def distance(self, other: "PoincareVector") -> float:
        self._same_space(other)
        return float(geodesic_distance(self.components, other.components, self.c))

    def log0(self) -> np.ndarray:
        return log_map_origin(self.components, self.c)

    def to_klein(self) -> "KleinVector":
        return KleinVector(poincare_to_klein(self.components, self.c), self.c)

    @classmethod
    def exp0(cls, v, c: float = 1.0) -> "PoincareVector":
        return cls(exp_map_origin(v, c), c)

    def __repr__(self):
        return f"PoincareVector({self.components.tolist()}, c={self.c})"


@dataclass(frozen=True, eq=False)
class KleinVector:
    components: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        comps = np.array(self.components, dtype=np.float64).reshape(-1)
        c = _check_c(self.c)
        if comps.size == 0 or not np.all(np.isfinite(comps)):
            raise ContractViolation("components must be a non-empty finite vector")
        if c * float(comps @ comps) >= 1:
            raise ContractViolation("point lies outside the Klein ball")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "c", c)

    @property
    def lorentz_factor(self) -> float:
        return float(lorentz_factor(self.components, self.c))

    def to_poincare(self) -> PoincareVector:
        return PoincareVector(klein_to_poincare(self.components, self.c), self.c)


def midpoint(points: Sequence[PoincareVector]) -> PoincareVector:
    """Einstein midpoint of ``PoincareVector`` values sharing one space."""
    if len(points) == 0:
        raise ContractViolation("midpoint of an empty list")
    first = points[0]
    for p in points[1:]:
        first._same_space(p)
    arr = np.stack([p.components for p in points])
    return PoincareVector(einstein_midpoint(arr, first.c), first.c)
