"""Three-headed projection network, SGD with momentum, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, concat, normalize_rows, row_norm, where
from .errors import ContractViolation, DivergenceError
from .geometry import BOUNDARY_EPS, MIN_NORM
from .losses import (
    DEFAULT_PROTOTYPE_DECAY,
    DEFAULT_TAU,
    LabeledEmbeddingBatch,
    LossReport,
    PrototypeSet,
    blend_prototypes,
    joint_loss_terms,
    report_from_terms,
)

log = logging.getLogger(__name__)

ACTIVATIONS = {
    "tanh": Tensor.tanh,
    "softplus": Tensor.softplus,
    "relu": Tensor.relu,
}


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (256,)
    latent_dim: int = 128
    curvature: float = 0.01
    clip_radius: float = 1.0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.num_classes, self.latent_dim, *self.hidden_dims)
        if any(int(d) < 1 for d in dims):
            raise ContractViolation(f"all dimensions must be >= 1, got {dims}")
        if not self.curvature > 0 or not self.clip_radius > 0:
            raise ContractViolation("curvature and clip radius must be positive")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")

    def layer_shapes(self) -> dict:
        """Parameter name -> shape, in a fixed order."""
        shapes = {}
        dims = [self.input_dim, *self.hidden_dims, self.latent_dim]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"encoder.{i}.weight"] = (a, b)
            shapes[f"encoder.{i}.bias"] = (b,)
        d = self.latent_dim
        for head in ("sphere_head", "hyp_head"):
            for i in range(2):
                shapes[f"{head}.{i}.weight"] = (d, d)
                shapes[f"{head}.{i}.bias"] = (d,)
        shapes["classifier.weight"] = (d, self.num_classes)
        shapes["classifier.bias"] = (self.num_classes,)
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 512
    epochs: int = 500
    prototype_decay: float = DEFAULT_PROTOTYPE_DECAY
    tau: float = DEFAULT_TAU
    seed: int = 0
    lr_schedule: str = "constant"
    jitter: float = 0.05
    eval_size: int = 256
    hyperbolic_reduction: str = "mean"

    def __post_init__(self):
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ContractViolation("rates must be non-negative")
        if self.batch_size < 2:
            raise ContractViolation("batch_size must be at least 2")
        if self.epochs < 0:
            raise ContractViolation("epochs must be non-negative")
        if not 0 <= self.prototype_decay <= 1:
            raise ContractViolation("prototype_decay must lie in [0, 1]")
        if self.hyperbolic_reduction not in ("sum", "mean"):
            raise ContractViolation(f"unknown reduction {self.hyperbolic_reduction!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ContractViolation(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class NetworkState:
    params: dict
    buffers: dict
    step: int = 0
    seed: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.step,
            self.seed,
        )


@dataclass(frozen=True)
class ForwardOutput:
    z: np.ndarray
    z_s: np.ndarray
    z_h: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class TrainingBatch:
    inputs: np.ndarray
    labels: np.ndarray
    view_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.view_ids is None:
            object.__setattr__(self, "view_ids", np.zeros(len(self.labels), dtype=np.int64))


def init_state(spec: NetworkSpec, seed: int = 0) -> NetworkState:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.layer_shapes().items():
        if name.endswith("weight"):
            params[name] = rng.standard_normal(shape) * math.sqrt(1.0 / shape[0])
        else:
            params[name] = np.zeros(shape)
    buffers = {name: np.zeros_like(p) for name, p in params.items()}
    return NetworkState(params, buffers, 0, seed)


def clip_rows(v: Tensor, r: float) -> Tensor:
    # at |v| == r the rescaling branch supplies the gradient
    norm = row_norm(v)
    outside = norm.data >= r
    denom = where(outside, norm, np.full(norm.shape, r))
    return v * (r / denom)


def exp_map_rows(v: Tensor, c: float) -> Tensor:
    sqrt_c = math.sqrt(c)
    norm = row_norm(v)
    nonzero = norm.data > 0
    safe = where(nonzero, norm, np.ones(norm.shape)) * sqrt_c
    out = v * where(nonzero, safe.tanh() / safe, np.ones(norm.shape))
    out_norm = row_norm(out)
    outside = c * out_norm.data**2 >= 1
    if np.any(outside):
        maxnorm = (1 - BOUNDARY_EPS) / sqrt_c
        safe_out = where(outside, out_norm, np.ones(norm.shape))
        out = where(outside, out * (maxnorm / safe_out), out)
    return out


def _linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    return x @ params[f"{prefix}.weight"] + params[f"{prefix}.bias"]


def forward_graph(spec: NetworkSpec, params: dict, inputs) -> tuple:
    """Return (z, z_s, z_h, logits) as tensors; params may hold Tensors."""
    act = ACTIVATIONS[spec.activation]
    h = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        h = _linear(h, params, f"encoder.{i}")
        if i < n_layers - 1:
            h = act(h)
    z = normalize_rows(h)
    s = _linear(act(_linear(z, params, "sphere_head.0")), params, "sphere_head.1")
    z_s = normalize_rows(s)
    v = _linear(act(_linear(z, params, "hyp_head.0")), params, "hyp_head.1")
    z_h = exp_map_rows(clip_rows(v, spec.clip_radius), spec.curvature)
    logits = _linear(z, params, "classifier")
    return z, z_s, z_h, logits


def forward(spec: NetworkSpec, state: NetworkState, inputs) -> ForwardOutput:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ContractViolation(f"inputs must have shape (N, {spec.input_dim})")
    if not np.all(np.isfinite(inputs)):
        raise ContractViolation("inputs must be finite")
    z, z_s, z_h, logits = (t.data for t in forward_graph(spec, state.params, inputs))
    for name, arr in (("z", z), ("z_s", z_s), ("z_h", z_h), ("logits", logits)):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite values in {name}")
    return ForwardOutput(z, z_s, z_h, logits)


def embed(spec: NetworkSpec, state: NetworkState, inputs, chunk: int = 4096) -> np.ndarray:
    """Normalized latent z for every input row."""
    inputs = np.asarray(inputs, dtype=np.float64)
    parts = [forward(spec, state, inputs[i:i + chunk]).z for i in range(0, len(inputs), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, spec.latent_dim))


def loss_graph(
    spec: NetworkSpec,
    params: dict,
    batch: TrainingBatch,
    prototypes: np.ndarray,
    tau: float,
    decay: float,
    reduction: str = "mean",
):
    """Joint loss of a batch as a graph over ``params``.

    The prototypes used by the loss are the EMA blend of the incoming ones
    with this batch's class means, so the disparity term reaches the network.
    Returns (total, parts, skipped, blended_prototypes).
    """
    _, z_s, z_h, logits = forward_graph(spec, params, batch.inputs)
    mu = blend_prototypes(prototypes, z_s, batch.labels, decay)
    lab = LabeledEmbeddingBatch(z_s, z_h, logits, batch.labels, batch.view_ids)
    total, parts, skipped = joint_loss_terms(lab, mu, tau, spec.curvature, reduction)
    return total, parts, skipped, mu


def backward(
    spec: NetworkSpec,
    state: NetworkState,
    batch: TrainingBatch,
    protos: PrototypeSet,
    decay: float = DEFAULT_PROTOTYPE_DECAY,
    reduction: str = "mean",
):
    """Gradients of the joint loss for every parameter.

    Returns (grads, LossReport, updated PrototypeSet). Weight decay is not
    included; ``sgd_step`` adds it.
    """
    leaves = {name: Tensor(p, requires_grad=True, name=name) for name, p in state.params.items()}
    total, parts, skipped, mu = loss_graph(
        spec, leaves, batch, protos.prototypes, protos.tau, decay, reduction
    )
    report = report_from_terms(total, parts, skipped)
    if not np.isfinite(report.l_total):
        raise DivergenceError(f"non-finite loss {report.l_total}")
    total.backward()
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads, report, PrototypeSet(mu.data, protos.tau)


def weight_decay_grad(state: NetworkState, weight_decay: float) -> dict:
    return {name: weight_decay * p for name, p in state.params.items()}


def learning_rate_at(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.lr_schedule == "cosine" and total_steps > 0:
        return config.learning_rate * 0.5 * (1 + math.cos(math.pi * step / total_steps))
    return config.learning_rate


def sgd_step(state: NetworkState, grads: dict, config: TrainConfig, lr: float | None = None) -> NetworkState:
    """buffer <- momentum*buffer + grad + wd*param; param <- param - lr*buffer."""
    lr = config.learning_rate if lr is None else lr
    params, buffers = {}, {}
    for name, p in state.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} does not match {name} {p.shape}")
        buf = config.momentum * state.buffers[name] + g + config.weight_decay * p
        buffers[name] = buf
        params[name] = p - lr * buf
    return NetworkState(params, buffers, state.step + 1, state.seed)


def augment(inputs: np.ndarray, labels: np.ndarray, sigma: np.ndarray, rng, views: int = 2) -> TrainingBatch:
    """Originals followed by ``views`` jittered copies."""
    parts = [inputs] + [inputs + sigma * rng.standard_normal(inputs.shape) for _ in range(views)]
    view_ids = np.repeat(np.arange(views + 1), len(inputs))
    return TrainingBatch(np.concatenate(parts), np.tile(labels, views + 1), view_ids)


def evaluate(
    spec: NetworkSpec,
    state: NetworkState,
    batch: TrainingBatch,
    num_classes: int,
    tau: float,
    reduction: str = "mean",
) -> LossReport:
    """Joint loss with prototypes taken as the class means of the batch."""
    out = forward(spec, state, batch.inputs)
    protos = PrototypeSet.from_class_means(out.z_s, batch.labels, num_classes, tau)
    lab = LabeledEmbeddingBatch(out.z_s, out.z_h, out.logits, batch.labels, batch.view_ids)
    total, parts, skipped = joint_loss_terms(lab, protos.prototypes, tau, spec.curvature, reduction)
    return report_from_terms(total, parts, skipped)


def _check_dataset(inputs, labels, spec):
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim or len(inputs) != len(labels):
        raise ContractViolation("dataset shape does not match the network spec")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ContractViolation("training needs at least 2 classes with at least 2 samples each")
    if classes.min() < 0 or classes.max() >= spec.num_classes:
        raise ContractViolation(f"labels must lie in [0, {spec.num_classes})")
    return inputs, labels


def train(spec: NetworkSpec, config: TrainConfig, inputs, labels, progress=None):
    """Train with the joint loss; returns (state, prototypes, history).

    ``history[0]`` is the evaluation loss before the first update and
    ``history[e]`` the loss after epoch ``e``, all measured on one fixed
    evaluation batch so a zero learning rate gives a constant history.
    """
    inputs, labels = _check_dataset(inputs, labels, spec)
    rng = np.random.default_rng(config.seed)
    state = init_state(spec, config.seed)
    sigma = config.jitter * inputs.std(axis=0)
    n = len(inputs)

    eval_idx = np.sort(rng.permutation(n)[: min(config.eval_size, n)])
    eval_batch = augment(inputs[eval_idx], labels[eval_idx], sigma, rng)

    z_s0 = forward(spec, state, inputs).z_s
    protos = PrototypeSet.from_class_means(z_s0, labels, spec.num_classes, config.tau, config.seed)

    history = [evaluate(spec, state, eval_batch, spec.num_classes, config.tau, config.hyperbolic_reduction)]
    # a trailing partial batch is kept when it has at least two samples
    batches_per_epoch = n // config.batch_size + (n % config.batch_size >= 2)
    total_steps = batches_per_epoch * config.epochs
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(batches_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = augment(inputs[idx], labels[idx], sigma, rng)
            try:
                grads, _, protos = backward(
                    spec, state, batch, protos, config.prototype_decay, config.hyperbolic_reduction
                )
            except DivergenceError as exc:
                raise DivergenceError(str(exc), history) from exc
            lr = learning_rate_at(config, state.step, total_steps)
            state = sgd_step(state, grads, config, lr)
        report = evaluate(spec, state, eval_batch, spec.num_classes, config.tau, config.hyperbolic_reduction)
        if not np.isfinite(report.l_total):
            raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", history)
        history.append(report)
        log.debug("epoch %d loss %.6f", epoch + 1, report.l_total)
        if progress is not None:
            progress(epoch + 1, report)
    return state, protos, history
