"""Hypersphere, hyperbolic and classification losses.

Loss functions accept numpy arrays or ``Tensor`` values and return a
scalar ``Tensor``; call ``float()`` on it for the value or ``.backward()``
for gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, log_softmax, logsumexp, normalize_rows, pairwise_sqdist, where
from .errors import ContractViolation
from .geometry import ATANH_EPS

DEFAULT_TAU = 0.1
DEFAULT_PROTOTYPE_DECAY = 0.95
UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """K unit-norm class prototypes sharing one temperature."""

    prototypes: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        protos = np.array(self.prototypes, dtype=np.float64)
        if protos.ndim != 2 or protos.shape[0] < 1:
            raise ContractViolation("prototypes must be a (K, d) array with K >= 1")
        if not np.all(np.abs(np.linalg.norm(protos, axis=1) - 1) <= UNIT_TOL):
            raise ContractViolation("prototype rows must have unit norm")
        if not self.tau > 0:
            raise ContractViolation(f"temperature must be positive, got {self.tau}")
        protos.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @classmethod
    def from_class_means(cls, z_s, labels, num_classes: int, tau: float = DEFAULT_TAU, seed: int = 0):
        """Normalized per-class means; classes with no samples get a random direction."""
        z_s = np.asarray(z_s, dtype=np.float64)
        labels = np.asarray(labels)
        rng = np.random.default_rng(seed)
        protos = rng.standard_normal((num_classes, z_s.shape[1]))
        for k in range(num_classes):
            rows = z_s[labels == k]
            if len(rows):
                protos[k] = rows.mean(axis=0)
        return cls(_unit_rows(protos), tau)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return normalize_rows(Tensor(x)).data


@dataclass(frozen=True, eq=False)
class LabeledEmbeddingBatch:
    """Outputs of the three heads for a batch holding originals and augmented views.

    ``view_ids[i]`` is 0 for an original sample and v >= 1 for its v-th
    augmented view; the augmented rows form the contrast set.
    """

    sphere_embeddings: np.ndarray
    hyperbolic_embeddings: np.ndarray
    logits: np.ndarray
    labels: np.ndarray
    view_ids: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        view_ids = np.asarray(self.view_ids, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "view_ids", view_ids)
        n = labels.shape[0]
        for name in ("sphere_embeddings", "hyperbolic_embeddings", "logits"):
            value = getattr(self, name)
            if not isinstance(value, Tensor):
                value = np.asarray(value, dtype=np.float64)
                object.__setattr__(self, name, value)
            if value.shape[0] != n:
                raise ContractViolation(f"{name} has {value.shape[0]} rows, expected {n}")
        if view_ids.shape[0] != n:
            raise ContractViolation("view_ids length does not match labels")
        k = self.logits.shape[1]
        if n and (labels.min() < 0 or labels.max() >= k):
            raise ContractViolation(f"labels must lie in [0, {k})")

    @property
    def augmented(self) -> np.ndarray:
        return self.view_ids > 0


@dataclass(frozen=True)
class LossReport:
    l_com: float
    l_dis: float
    l_hypb: float
    l_ce: float
    l_total: float
    skipped_anchors: int = field(default=0, compare=False)

    def as_dict(self) -> dict:
        return {
            "l_com": self.l_com,
            "l_dis": self.l_dis,
            "l_hypb": self.l_hypb,
            "l_ce": self.l_ce,
            "l_total": self.l_total,
        }


def _proto_array(prototypes):
    if isinstance(prototypes, PrototypeSet):
        return prototypes.prototypes
    return prototypes


def vmf_class_posterior(z_s, prototypes, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Softmax over prototypes of mu_k . z / tau; rows sum to one."""
    z = np.asarray(z_s, dtype=np.float64)
    mu = np.asarray(_proto_array(prototypes), dtype=np.float64)
    logits = z @ mu.T / tau
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def _pick(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(log_probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return (log_probs * onehot).sum(axis=1)


def compactness_loss(z_s, labels, prototypes, tau: float = DEFAULT_TAU) -> Tensor:
    """Mean negative log posterior of each sample's own class."""
    z = as_tensor(z_s)
    mu = as_tensor(_proto_array(prototypes))
    labels = np.asarray(labels, dtype=np.int64)
    return -_pick(log_softmax((z @ mu.T) / tau, axis=1), labels).mean()


def disparity_loss(prototypes, tau: float = DEFAULT_TAU) -> Tensor:
    mu = as_tensor(_proto_array(prototypes))
    k = mu.shape[0]
    if k < 2:
        raise ContractViolation("disparity loss needs at least two prototypes")
    sims = (mu @ mu.T) / tau
    # exclude j == i by pushing the diagonal to -inf before the log-sum-exp
    off = where(np.eye(k, dtype=bool), np.full((k, k), -np.inf), sims)
    return (logsumexp(off, axis=1) - np.log(k - 1)).mean()


def poincare_pairwise_distance(u, v, c: float) -> Tensor:
    """Geodesic distances between rows of ``u`` and ``v`` on the ball.

    Uses |(-u) (+) v| = |u - v| / sqrt(1 - 2c<u,v> + c^2 |u|^2 |v|^2), which
    avoids materialising every Mobius sum.
    """
    same = u is v
    u = as_tensor(u)
    v = u if same else as_tensor(v)
    sqrt_c = float(np.sqrt(c))
    nu = (u * u).sum(axis=1, keepdims=True)
    nv = (v * v).sum(axis=1, keepdims=True)
    den = 1 - 2 * c * (u @ v.T) + c**2 * (nu @ nv.T)
    gyro_norm = pairwise_sqdist(u, v).sqrt() / den.sqrt()
    arg = (gyro_norm * sqrt_c).clip(0.0, 1 - ATANH_EPS)
    return arg.arctanh() * (2 / sqrt_c)


def _hyperbolic_terms(z_h, labels, augmented, c: float, tau: float, reduction: str = "sum"):
    z = as_tensor(z_h)
    labels = np.asarray(labels, dtype=np.int64)
    augmented = np.asarray(augmented, dtype=bool)
    n = labels.shape[0]
    if not np.any(augmented):
        raise ContractViolation("hyperbolic contrastive loss needs at least one augmented sample")
    positives = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    counts = positives.sum(axis=1)
    valid = counts > 0
    skipped = int(n - valid.sum())
    if not np.any(valid):
        return Tensor(0.0), skipped
    logits = poincare_pairwise_distance(z, z, c) * (-1.0 / tau)
    log_norm = logsumexp(logits[:, np.flatnonzero(augmented)], axis=1)
    log_prob = logits - log_norm.reshape(n, 1)
    weights = np.where(valid[:, None], positives / np.maximum(counts, 1)[:, None], 0.0)
    if reduction == "mean":
        weights = weights / valid.sum()
    elif reduction != "sum":
        raise ContractViolation(f"unknown reduction {reduction!r}")
    return -(log_prob * weights).sum(), skipped


def hyperbolic_contrastive_loss(
    z_h, labels, augmented, c: float, tau: float = DEFAULT_TAU, reduction: str = "sum"
) -> Tensor:
    """Supervised contrastive loss on geodesic distances.

    Positives of anchor i are all other rows with its label; the
    denominator runs over rows flagged in ``augmented``. Anchors without a
    positive contribute nothing. ``reduction="mean"`` divides the sum by
    the number of contributing anchors.
    """
    return _hyperbolic_terms(z_h, labels, augmented, c, tau, reduction)[0]


def count_skipped_anchors(labels) -> int:
    labels = np.asarray(labels)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return int(np.sum(counts[inverse] == 1))


def cross_entropy_loss(logits, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    return -_pick(log_softmax(as_tensor(logits), axis=1), labels).mean()


def joint_loss_terms(batch: LabeledEmbeddingBatch, prototypes, tau: float, c: float, reduction: str = "sum"):
    """Build the four loss tensors and their sum; returns (total, parts, skipped)."""
    mu = as_tensor(_proto_array(prototypes))
    l_com = compactness_loss(batch.sphere_embeddings, batch.labels, mu, tau)
    l_dis = disparity_loss(mu, tau) if mu.shape[0] > 1 else Tensor(0.0)
    l_hypb, skipped = _hyperbolic_terms(
        batch.hyperbolic_embeddings, batch.labels, batch.augmented, c, tau, reduction
    )
    l_ce = cross_entropy_loss(batch.logits, batch.labels)
    total = l_com + l_dis + l_hypb + l_ce
    return total, (l_com, l_dis, l_hypb, l_ce), skipped


def report_from_terms(total: Tensor, parts, skipped: int) -> LossReport:
    l_com, l_dis, l_hypb, l_ce = (float(t) for t in parts)
    return LossReport(l_com, l_dis, l_hypb, l_ce, float(total), skipped)


def joint_loss(
    batch: LabeledEmbeddingBatch, protos: PrototypeSet, c: float, hyperbolic_reduction: str = "sum"
) -> LossReport:
    """Unweighted sum of compactness, disparity, hyperbolic and cross-entropy losses.

    With a single class the disparity term is defined as zero.
    """
    total, parts, skipped = joint_loss_terms(batch, protos, protos.tau, c, hyperbolic_reduction)
    return report_from_terms(total, parts, skipped)


def blend_prototypes(prototypes, z_s, labels, decay: float):
    """EMA step toward per-class batch means; differentiable in both inputs.

    Classes absent from ``labels`` keep their prototype.
    """
    mu = as_tensor(prototypes)
    z = as_tensor(z_s)
    labels = np.asarray(labels, dtype=np.int64)
    k = mu.shape[0]
    onehot = np.zeros((labels.shape[0], k))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    counts = onehot.sum(axis=0)
    means = (Tensor(onehot.T) @ z) / np.maximum(counts, 1.0)[:, None]
    blended = normalize_rows(mu * decay + means * (1 - decay))
    return where((counts > 0)[:, None], blended, mu)


def update_prototypes(protos: PrototypeSet, z_s, labels, decay: float = DEFAULT_PROTOTYPE_DECAY) -> PrototypeSet:
    if not 0 <= decay <= 1:
        raise ContractViolation(f"decay must lie in [0, 1], got {decay}")
    new = blend_prototypes(protos.prototypes, np.asarray(z_s, dtype=np.float64), labels, decay)
    return PrototypeSet(new.data, protos.tau)
