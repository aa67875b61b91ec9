"""Distance-based OOD scores over an exact reference index.

Scores are squared L2 distances in the shared normalized latent space; a
larger score means more out-of-distribution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ContractViolation

UNIT_TOL = 1e-6
MAHALANOBIS_RIDGE = 1e-6
CENTER_SOURCES = ("empirical", "prototypes")


def _readonly(x) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return x


def _as_queries(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    return (z[None, :] if single else z), single


def _finish(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def sqdist(queries: np.ndarray, refs: np.ndarray, budget: int = 1 << 22) -> np.ndarray:
    """Exact squared distances by direct coordinate differences, chunked over queries."""
    n, m = len(queries), len(refs)
    out = np.empty((n, m))
    step = max(1, budget // max(1, m * refs.shape[1]))
    for i in range(0, n, step):
        diff = queries[i:i + step, None, :] - refs[None, :, :]
        out[i:i + step] = np.square(diff).sum(axis=-1)
    return out


@dataclass(frozen=True, eq=False)
class ReferenceIndex:
    """Immutable store of unit-norm training embeddings and their class centers."""

    embeddings: np.ndarray
    labels: np.ndarray
    class_centers: np.ndarray
    prototypes: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_centers)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def centers(self, source: str = "empirical") -> np.ndarray:
        if source == "empirical":
            return self.class_centers
        if source == "prototypes":
            if self.prototypes is None:
                raise ContractViolation("index was built without learned prototypes")
            return self.prototypes
        raise ContractViolation(f"unknown center source {source!r}")

    @cached_property
    def class_means(self) -> np.ndarray:
        """Unnormalized per-class means (used for the shared covariance)."""
        return _readonly(np.stack([self.embeddings[self.labels == k].mean(axis=0) for k in range(self.num_classes)]))

    @cached_property
    def precision(self) -> np.ndarray:
        centered = self.embeddings - self.class_means[self.labels]
        cov = centered.T @ centered / self.size + MAHALANOBIS_RIDGE * np.eye(self.dim)
        cond = np.linalg.cond(cov)
        if not np.isfinite(cond) or cond > 1e14:
            raise ContractViolation(f"covariance is singular after regularization (cond={cond:.3g})")
        return _readonly(np.linalg.inv(cov))


def build_index(embeddings, labels, prototypes=None) -> ReferenceIndex:
    """Index unit-norm embeddings; class centers are renormalized class means.

    Labels must cover 0..K-1 with no gaps. ``prototypes`` optionally stores
    learned class prototypes as an alternative center source.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    if emb.ndim != 2 or len(emb) == 0:
        raise ContractViolation("index needs a non-empty (M, d) embedding array")
    if lab.shape != (len(emb),):
        raise ContractViolation("labels must have one entry per embedding")
    if not np.all(np.isfinite(emb)):
        raise ContractViolation("embeddings must be finite")
    if np.any(np.abs(np.linalg.norm(emb, axis=1) - 1) > UNIT_TOL):
        raise ContractViolation("index embeddings must have unit norm")
    classes = np.unique(lab)
    if classes[0] != 0 or not np.array_equal(classes, np.arange(len(classes))):
        raise ContractViolation("labels must cover 0..K-1 without gaps")
    means = np.stack([emb[lab == k].mean(axis=0) for k in classes])
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    centers = np.where(norms > 0, means / np.maximum(norms, 1e-15), means)
    protos = None
    if prototypes is not None:
        protos = _readonly(prototypes)
        if protos.shape[1] != emb.shape[1]:
            raise ContractViolation("prototype dimension does not match embeddings")
    labels_ro = lab.copy()
    labels_ro.setflags(write=False)
    return ReferenceIndex(_readonly(emb), labels_ro, _readonly(centers), protos)


@dataclass(frozen=True)
class ScoringConfig:
    k: int = 300
    p: int = 3
    center_source: str = "empirical"

    def validated(self, index: ReferenceIndex) -> "ScoringConfig":
        """Check against an index; k is capped at the index size."""
        k = min(self.k, index.size)
        if k < 1:
            raise ContractViolation(f"k must be >= 1, got {self.k}")
        if not 0 <= self.p <= index.num_classes:
            raise ContractViolation(f"p must lie in [0, {index.num_classes}], got {self.p}")
        if self.center_source not in CENTER_SOURCES:
            raise ContractViolation(f"unknown center source {self.center_source!r}")
        return ScoringConfig(k, self.p, self.center_source)


def knn_neighbors(z, index: ReferenceIndex, k: int) -> np.ndarray:
    """Indices of the k nearest stored rows, ties broken by storage order."""
    q, _ = _as_queries(z)
    if not 1 <= k <= index.size:
        raise ContractViolation(f"k must lie in [1, {index.size}], got {k}")
    return np.argsort(sqdist(q, index.embeddings), axis=1, kind="stable")[:, :k]


def knn_score(z, index: ReferenceIndex, k: int):
    """Squared distance to the k-th nearest stored embedding."""
    q, single = _as_queries(z)
    if not 1 <= k <= index.size:
        raise ContractViolation(f"k must lie in [1, {index.size}], got {k}")
    if q.shape[1] != index.dim:
        raise ContractViolation(f"query dimension {q.shape[1]} != index dimension {index.dim}")
    d = sqdist(q, index.embeddings)
    return _finish(np.partition(d, k - 1, axis=1)[:, k - 1], single)


def prototype_score(z, index: ReferenceIndex, p: int, center_source: str = "empirical"):
    """Mean squared distance to the p nearest class centers (0 when p == 0)."""
    q, single = _as_queries(z)
    centers = index.centers(center_source)
    if not 0 <= p <= len(centers):
        raise ContractViolation(f"p must lie in [0, {len(centers)}], got {p}")
    if p == 0:
        return _finish(np.zeros(len(q)), single)
    d = np.sort(sqdist(q, centers), axis=1)[:, :p]
    return _finish(d.mean(axis=1), single)


def pknn_score(z, index: ReferenceIndex, config: ScoringConfig = ScoringConfig()):
    cfg = config.validated(index)
    s_k = knn_score(z, index, cfg.k)
    if cfg.p == 0:
        return s_k
    return s_k + prototype_score(z, index, cfg.p, cfg.center_source)


def mahalanobis_score(z, index: ReferenceIndex):
    """Minimum over classes of the shared-covariance Mahalanobis distance."""
    q, single = _as_queries(z)
    return _finish(mahalanobis_from(q, index.class_centers, index.precision), single)


def mahalanobis_from(queries: np.ndarray, centers: np.ndarray, precision: np.ndarray) -> np.ndarray:
    best = np.full(len(queries), np.inf)
    for center in centers:
        diff = queries - center
        best = np.minimum(best, np.einsum("ij,jk,ik->i", diff, precision, diff))
    return best


@dataclass(frozen=True, eq=False)
class EnrollmentSet:
    ood_prototype: np.ndarray | None = None
    novel_class_prototypes: np.ndarray | None = None

    def __post_init__(self):
        for name in ("ood_prototype", "novel_class_prototypes"):
            value = getattr(self, name)
            if value is None:
                continue
            value = _readonly(value)
            if not np.all(np.isfinite(value)):
                raise ContractViolation(f"{name} must be finite")
            object.__setattr__(self, name, value)
        novel = self.novel_class_prototypes
        if novel is not None:
            if novel.ndim == 1:
                object.__setattr__(self, "novel_class_prototypes", _readonly(novel[None, :]))
            if len(self.novel_class_prototypes) == 0:
                object.__setattr__(self, "novel_class_prototypes", None)
        if self.ood_prototype is not None and self.novel_class_prototypes is not None:
            if self.ood_prototype.shape[-1] != self.novel_class_prototypes.shape[-1]:
                raise ContractViolation("enrolled prototypes have different dimensions")

    @property
    def empty(self) -> bool:
        return self.ood_prototype is None and self.novel_class_prototypes is None

    def with_novel(self, novel: "EnrollmentSet") -> "EnrollmentSet":
        return EnrollmentSet(self.ood_prototype, novel.novel_class_prototypes)


def _normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0, x / np.maximum(norms, 1e-15), x)


def enroll_ood(samples) -> EnrollmentSet:
    """Enrolled OOD prototype: plain mean of the normalized sample embeddings."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if len(x) == 0:
        raise ContractViolation("OOD enrollment needs at least one sample")
    return EnrollmentSet(ood_prototype=_normalize(x).mean(axis=0))


def enroll_novel(samples, labels=None) -> EnrollmentSet:
    """One prototype per novel class (mean of its normalized samples).

    Without labels every sample becomes its own prototype.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if len(x) == 0:
        raise ContractViolation("novel-class enrollment needs at least one sample")
    x = _normalize(x)
    if labels is None:
        return EnrollmentSet(novel_class_prototypes=x)
    labels = np.asarray(labels)
    protos = np.stack([x[labels == k].mean(axis=0) for k in np.unique(labels)])
    return EnrollmentSet(novel_class_prototypes=protos)


def enrollment_terms(z, enrollment: EnrollmentSet) -> tuple:
    """(S_ood, S_novel) per query: distances to the OOD and nearest novel prototypes."""
    q, _ = _as_queries(z)
    s_ood = np.zeros(len(q))
    s_novel = np.zeros(len(q))
    if enrollment.ood_prototype is not None:
        s_ood = sqdist(q, enrollment.ood_prototype[None, :])[:, 0]
    if enrollment.novel_class_prototypes is not None:
        s_novel = sqdist(q, enrollment.novel_class_prototypes).min(axis=1)
    return s_ood, s_novel


def adjusted_score(z, index: ReferenceIndex, config: ScoringConfig, enrollment: EnrollmentSet | None):
    """PKNN score minus the OOD-prototype distance plus the novel-prototype distance."""
    base = pknn_score(z, index, config)
    if enrollment is None or enrollment.empty:
        return base
    q, single = _as_queries(z)
    s_ood, s_novel = enrollment_terms(q, enrollment)
    base = np.atleast_1d(base)
    if enrollment.ood_prototype is not None:
        base = base - s_ood
    if enrollment.novel_class_prototypes is not None:
        base = base + s_novel
    return _finish(base, single)


class Verdict(str, enum.Enum):
    ID = "ID"
    OOD = "OOD"


@dataclass(frozen=True)
class OODDecision:
    score: float
    verdict: Verdict
    threshold: float = field(default=0.0)


def detect(score, threshold: float):
    """ID when score <= threshold; returns a list for array input."""
    if np.ndim(score) == 0:
        s = float(score)
        if not (np.isfinite(s) and np.isfinite(threshold)):
            raise ContractViolation("score and threshold must be finite")
        return OODDecision(s, Verdict.ID if s <= threshold else Verdict.OOD, float(threshold))
    return [detect(s, threshold) for s in np.asarray(score, dtype=np.float64)]
