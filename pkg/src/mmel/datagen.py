"""Seeded synthetic ID/OOD datasets.

Every generator is a pure function of its ``SynthesisSpec``: the same spec
always yields the same arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

OOD_MODES = ("held_out", "rotated", "scaled")
GENERATORS = ("sphere", "tree")


@dataclass(frozen=True)
class SynthesisSpec:
    generator: str = "sphere"
    num_classes: int = 4
    samples_per_class: int = 500
    test_per_class: int = 250
    input_dim: int = 16
    noise: float = 0.1
    depth: int = 2
    branch_scale: float = 1.0
    ood_mode: str = "held_out"
    ood_classes: int = 2
    ood_samples: int = 1000
    ood_enroll_samples: int = 200
    ood_scale: float = 3.0
    train_classes: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ContractViolation(f"unknown generator {self.generator!r}")
        if self.ood_mode not in OOD_MODES:
            raise ContractViolation(f"unknown OOD mode {self.ood_mode!r}")
        counts = (self.num_classes, self.samples_per_class, self.input_dim, self.depth)
        if min(counts) < 1 or self.test_per_class < 0 or self.ood_samples < 0:
            raise ContractViolation("counts and dimensions must be positive")
        if self.noise < 0 or self.ood_scale <= 0 or self.branch_scale <= 0:
            raise ContractViolation("noise must be non-negative and scales positive")
        if not 0 <= self.train_classes <= self.num_classes:
            raise ContractViolation("train_classes must lie in [0, num_classes]")

    @property
    def id_classes(self) -> int:
        return 2**self.depth if self.generator == "tree" else self.num_classes

    @property
    def seen_classes(self) -> int:
        """Classes used for training; the rest are novel ID classes."""
        return self.train_classes or self.id_classes


@dataclass(frozen=True)
class LabeledVectors:
    vectors: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def select(self, mask) -> "LabeledVectors":
        return LabeledVectors(self.vectors[mask], self.labels[mask])


def _rng(spec: SynthesisSpec, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, stream])


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-15)


def class_directions(spec: SynthesisSpec, count: int) -> np.ndarray:
    """``count`` orthonormal directions from Gram-Schmidt (QR) on seeded Gaussians."""
    if count > spec.input_dim:
        raise ContractViolation(
            f"cannot orthogonalise {count} directions in {spec.input_dim} dimensions"
        )
    raw = _rng(spec, 1).standard_normal((spec.input_dim, spec.input_dim))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))
    return q.T[:count]


def _sample_sphere(directions, labels, noise, rng) -> np.ndarray:
    centers = directions[labels]
    return _unit(centers + noise * rng.standard_normal(centers.shape))


def gen_sphere_mixture(spec: SynthesisSpec, per_class: int | None = None, stream: int = 2) -> LabeledVectors:
    """Unit vectors scattered around K orthonormal class directions."""
    per_class = spec.samples_per_class if per_class is None else per_class
    directions = class_directions(spec, spec.num_classes)
    labels = np.repeat(np.arange(spec.num_classes), per_class)
    return LabeledVectors(_sample_sphere(directions, labels, spec.noise, _rng(spec, stream)), labels)


def tree_centroids(spec: SynthesisSpec, depth: int | None = None, stream: int = 4) -> np.ndarray:
    """Leaves of a binary random-walk tree whose branch length halves per level."""
    depth = spec.depth if depth is None else depth
    rng = _rng(spec, stream)
    level = np.zeros((1, spec.input_dim))
    step = spec.branch_scale
    for _ in range(depth):
        kids = np.repeat(level, 2, axis=0)
        kids = kids + step * _unit(rng.standard_normal(kids.shape))
        level = kids
        step /= 2
    return level


def gen_tree_hierarchy(spec: SynthesisSpec, per_class: int | None = None, stream: int = 2) -> LabeledVectors:
    per_class = spec.samples_per_class if per_class is None else per_class
    centroids = tree_centroids(spec)
    labels = np.repeat(np.arange(len(centroids)), per_class)
    # noise scaled to the finest branch so leaves stay distinguishable
    scale = spec.noise * spec.branch_scale / 2 ** (spec.depth - 1) / np.sqrt(spec.input_dim)
    rng = _rng(spec, stream)
    vectors = centroids[labels] + scale * rng.standard_normal((len(labels), spec.input_dim))
    return LabeledVectors(vectors, labels)


def gen_id(spec: SynthesisSpec, per_class: int | None = None, stream: int = 2) -> LabeledVectors:
    if spec.generator == "tree":
        return gen_tree_hierarchy(spec, per_class, stream)
    return gen_sphere_mixture(spec, per_class, stream)


def _complement_swap(spec: SynthesisSpec, k: int) -> np.ndarray:
    # orthogonal map exchanging the span of the first k directions with the last k
    if 2 * k > spec.input_dim:
        raise ContractViolation("rotated mode needs input_dim >= 2 * num_classes")
    q = class_directions(spec, spec.input_dim)
    perm = np.arange(spec.input_dim)
    perm[:k], perm[-k:] = perm[-k:].copy(), perm[:k].copy()
    return q.T @ q[perm]


def gen_ood(spec: SynthesisSpec, id_dataset: LabeledVectors | None = None, count: int | None = None, stream: int = 5) -> LabeledVectors:
    """OOD vectors in one of three shift modes.

    ``held_out`` draws from classes beyond the ID ones (labels record the
    generating class), ``rotated`` maps fresh ID-like samples into the
    orthogonal complement of the ID class span, and ``scaled`` multiplies
    fresh ID-like samples by ``ood_scale``. Non-class modes label rows -1.
    """
    count = spec.ood_samples if count is None else count
    rng = _rng(spec, stream)
    k = spec.id_classes
    if spec.ood_mode == "held_out":
        m = max(spec.ood_classes, 1)
        labels = k + np.arange(count) % m
        if spec.generator == "tree":
            extra = tree_centroids(spec, stream=stream + 100)[:m]
            scale = spec.noise * spec.branch_scale / 2 ** (spec.depth - 1) / np.sqrt(spec.input_dim)
            vectors = extra[labels - k] + scale * rng.standard_normal((count, spec.input_dim))
        else:
            directions = class_directions(spec, k + m)
            vectors = _sample_sphere(directions, labels, spec.noise, rng)
        return LabeledVectors(vectors, labels)
    fresh = gen_id(spec, per_class=-(-count // k), stream=stream + 50)
    pick = np.sort(rng.permutation(len(fresh))[:count])
    base = fresh.vectors[pick]
    if spec.ood_mode == "scaled":
        vectors = spec.ood_scale * base
    else:
        vectors = base @ _complement_swap(spec, k).T
    return LabeledVectors(vectors, np.full(count, -1, dtype=np.int64))


@dataclass(frozen=True)
class SyntheticSplits:
    train: LabeledVectors
    test: LabeledVectors
    ood_test: LabeledVectors
    ood_enroll: LabeledVectors
    novel_enroll: LabeledVectors


def generate_splits(spec: SynthesisSpec) -> SyntheticSplits:
    """Train/test ID splits plus disjoint OOD test and enrollment pools.

    Classes at or beyond ``seen_classes`` are left out of ``train``; one
    sample of each goes to ``novel_enroll``.
    """
    per_class = spec.samples_per_class + spec.test_per_class + 1
    data = gen_id(spec, per_class=per_class)
    k = spec.id_classes
    within = np.tile(np.arange(per_class), k)
    train = data.select(within < spec.samples_per_class)
    test = data.select((within >= spec.samples_per_class) & (within < per_class - 1))
    novel = data.select((within == per_class - 1) & (data.labels >= spec.seen_classes))
    train = train.select(train.labels < spec.seen_classes)
    ood_test = gen_ood(spec, train, spec.ood_samples, stream=5)
    ood_enroll = gen_ood(spec, train, spec.ood_enroll_samples, stream=6)
    return SyntheticSplits(train, test, ood_test, ood_enroll, novel)
