"""Checkpoints and the train / score / enroll / evaluate workflows."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import io
from .errors import ContractViolation
from .losses import LossReport, PrototypeSet
from .metrics import MetricReport, evaluate_scores
from .network import NetworkSpec, NetworkState, TrainConfig, embed, train
from .scoring import (
    EnrollmentSet,
    ReferenceIndex,
    ScoringConfig,
    adjusted_score,
    build_index,
    enroll_ood,
    enrollment_terms,
    knn_score,
    mahalanobis_score,
    pknn_score,
)

SCORERS = ("pknn", "knn", "maha")


@dataclass
class Checkpoint:
    spec: NetworkSpec
    config: TrainConfig
    state: NetworkState
    prototypes: PrototypeSet
    history: list
    index: ReferenceIndex

    def embed(self, inputs) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.spec.input_dim:
            raise ContractViolation(
                f"input dimension {inputs.shape[-1]} does not match the network ({self.spec.input_dim})"
            )
        return embed(self.spec, self.state, inputs)


def _spec_dict(spec: NetworkSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["hidden_dims"] = list(spec.hidden_dims)
    return d


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "network": _spec_dict(ckpt.spec),
        "train": dataclasses.asdict(ckpt.config),
        "seed": ckpt.state.seed,
        "step": ckpt.state.step,
        "tau": ckpt.prototypes.tau,
        "history": [r.as_dict() for r in ckpt.history],
    }
    arrays = {}
    for name, value in ckpt.state.params.items():
        arrays[f"param/{name}"] = value
    for name, value in ckpt.state.buffers.items():
        arrays[f"buffer/{name}"] = value
    arrays["prototypes"] = ckpt.prototypes.prototypes
    arrays["index/embeddings"] = ckpt.index.embeddings
    arrays["index/labels"] = ckpt.index.labels
    io.write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path) -> Checkpoint:
    _, meta, arrays = io.read_container(path, "checkpoint")
    spec = NetworkSpec(**meta["network"])
    config = TrainConfig(**meta["train"])
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in arrays.items() if k.startswith("buffer/")}
    expected = spec.layer_shapes()
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise io.FormatError(f"checkpoint parameter {name} is missing or has the wrong shape")
    state = NetworkState(params, buffers, meta["step"], meta["seed"])
    protos = PrototypeSet(arrays["prototypes"], meta["tau"])
    history = [LossReport(**h) for h in meta["history"]]
    index = build_index(arrays["index/embeddings"], arrays["index/labels"], protos.prototypes)
    return Checkpoint(spec, config, state, protos, history, index)


def save_index(path, index: ReferenceIndex) -> None:
    arrays = {"embeddings": index.embeddings, "labels": index.labels}
    if index.prototypes is not None:
        arrays["prototypes"] = index.prototypes
    io.write_container(path, "index", {}, arrays)


def load_index(path) -> ReferenceIndex:
    _, _, arrays = io.read_container(path, "index")
    return build_index(arrays["embeddings"], arrays["labels"], arrays.get("prototypes"))


def save_enrollment(path, enrollment: EnrollmentSet) -> None:
    arrays = {}
    if enrollment.ood_prototype is not None:
        arrays["ood_prototype"] = enrollment.ood_prototype
    if enrollment.novel_class_prototypes is not None:
        arrays["novel_class_prototypes"] = enrollment.novel_class_prototypes
    io.write_container(path, "enrollment", {}, arrays)


def load_enrollment(path) -> EnrollmentSet:
    _, _, arrays = io.read_container(path, "enrollment")
    return EnrollmentSet(arrays.get("ood_prototype"), arrays.get("novel_class_prototypes"))


def train_checkpoint(spec: NetworkSpec, config: TrainConfig, inputs, labels, progress=None) -> Checkpoint:
    """Train, then index the training set's latent embeddings."""
    state, protos, history = train(spec, config, inputs, labels, progress)
    z = embed(spec, state, inputs)
    index = build_index(z, labels, protos.prototypes)
    return Checkpoint(spec, config, state, protos, history, index)


def score_embeddings(
    z,
    index: ReferenceIndex,
    scorer: str = "pknn",
    config: ScoringConfig = ScoringConfig(),
    enrollment: EnrollmentSet | None = None,
) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != index.dim:
        raise ContractViolation(f"embedding dimension {z.shape[1]} != index dimension {index.dim}")
    if scorer == "pknn":
        return np.asarray(adjusted_score(z, index, config, enrollment))
    if enrollment is not None and not enrollment.empty:
        raise ContractViolation("enrollment is only supported with the pknn scorer")
    if scorer == "knn":
        return np.asarray(knn_score(z, index, config.validated(index).k))
    if scorer == "maha":
        return np.asarray(mahalanobis_score(z, index))
    raise ContractViolation(f"unknown scorer {scorer!r}")


@dataclass(frozen=True)
class ResampleSummary:
    trials: list
    fpr95_mean: float
    fpr95_std: float
    auc_mean: float
    auc_std: float

    def fields(self) -> dict:
        return {
            "trials": str(len(self.trials)),
            "fpr95_mean": repr(self.fpr95_mean),
            "fpr95_std": repr(self.fpr95_std),
            "auc_mean": repr(self.auc_mean),
            "auc_std": repr(self.auc_std),
        }


def summarize(reports: list) -> ResampleSummary:
    fpr = np.array([r.fpr95 for r in reports])
    auc = np.array([r.auc for r in reports])
    return ResampleSummary(list(reports), float(fpr.mean()), float(fpr.std()), float(auc.mean()), float(auc.std()))


def enrollment_resample(
    id_z,
    ood_z,
    pool_z,
    index: ReferenceIndex,
    config: ScoringConfig = ScoringConfig(),
    n_enroll: int = 10,
    trials: int = 20,
    seed: int = 0,
    novel: EnrollmentSet | None = None,
) -> ResampleSummary:
    """Repeat OOD enrollment with ``n_enroll`` samples drawn from ``pool_z``.

    Each trial draws without replacement using its own seeded stream and
    scores ID and OOD embeddings with the adjusted score.
    """
    pool_z = np.asarray(pool_z, dtype=np.float64)
    if not 1 <= n_enroll <= len(pool_z):
        raise ContractViolation(f"cannot enroll {n_enroll} samples from a pool of {len(pool_z)}")
    if trials < 1:
        raise ContractViolation("trials must be >= 1")
    base_id = np.asarray(pknn_score(id_z, index, config))
    base_ood = np.asarray(pknn_score(ood_z, index, config))
    novel_id = novel_ood = 0.0
    if novel is not None and novel.novel_class_prototypes is not None:
        novel_id = enrollment_terms(id_z, novel)[1]
        novel_ood = enrollment_terms(ood_z, novel)[1]
    reports = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        chosen = pool_z[rng.choice(len(pool_z), size=n_enroll, replace=False)]
        enr = enroll_ood(chosen)
        s_id = base_id - enrollment_terms(id_z, enr)[0] + novel_id
        s_ood = base_ood - enrollment_terms(ood_z, enr)[0] + novel_ood
        reports.append(evaluate_scores(s_id, s_ood))
    return summarize(reports)


def evaluate(id_scores, ood_scores) -> MetricReport:
    return evaluate_scores(id_scores, ood_scores)
