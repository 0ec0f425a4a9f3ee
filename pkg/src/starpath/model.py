"""Multi-layer perceptron with hand-written backpropagation.

Parameters are flattened layer-major: for each layer ``l`` the weight
matrix ``W_l`` of shape ``(d_l, d_{l+1})`` in row-major order, followed by
its bias ``b_l`` of length ``d_{l+1}``. Hidden layers apply the activation;
the output layer is linear (logits for crossentropy, predictions for MSE).

Per-sample losses:
    crossentropy   logsumexp(z) - z[y]      (max-subtracted)
    mse            0.5 * ||z - y||^2
A batch loss is the mean over its rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from starpath.dataio import Dataset
from starpath.errors import DimensionMismatchError, NumericError
from starpath.numcore import ParamVector
from starpath.problems import FiniteSumProblem, digest

logger = logging.getLogger("starpath")

ACTIVATIONS = ("relu", "tanh")
LOSSES = ("mse", "softmax_crossentropy")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"
    loss_kind: str = "softmax_crossentropy"
    init_seed: int = 0

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.loss_kind not in LOSSES:
            raise ValueError(f"loss_kind must be one of {LOSSES}, got {self.loss_kind!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum((sizes[l] + 1) * sizes[l + 1] for l in range(self.num_layers))

    @property
    def classes(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True, eq=False)
class Batch:
    """Rows of inputs with class indices (crossentropy) or a real target matrix (mse)."""

    inputs: npt.NDArray[np.float64]
    targets: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"batch inputs must be b x d_in with b >= 1, got {self.inputs.shape}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("targets and inputs disagree on batch size")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


def unpack(spec: MlpSpec, params: ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Views ``[(W_0, b_0), ...]`` into the flat parameter vector."""
    if params.shape != (spec.param_count,):
        raise DimensionMismatchError(spec.param_count, int(np.size(params)), what="parameter vector")
    layers = []
    offset = 0
    sizes = spec.layer_sizes
    for l in range(spec.num_layers):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: MlpSpec) -> ParamVector:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(spec.init_seed)
    parts = []
    sizes = spec.layer_sizes
    for l in range(spec.num_layers):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-s, s, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts).astype(np.float64)


# ── Forward / backward ───────────────────────────────────────────────


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # relu'(0) = 0
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _forward(spec: MlpSpec, layers, inputs: np.ndarray):
    acts = [inputs]
    pre = []
    a = inputs
    for l, (w, b) in enumerate(layers):
        z = a @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(layer=l + 1)
        pre.append(z)
        a = z if l == spec.num_layers - 1 else _activate(spec.activation, z)
        acts.append(a)
    return pre, acts


def _loss_and_output_grad(spec: MlpSpec, logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    b = logits.shape[0]
    if spec.loss_kind == "softmax_crossentropy":
        labels = np.asarray(targets, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= spec.classes:
            raise ValueError(f"class indices must lie in [0, {spec.classes})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(total)
        rows = np.arange(b)
        loss = float(-log_probs[rows, labels].mean())
        grad = exp / total
        grad[rows, labels] -= 1.0
        return loss, grad / b
    diff = logits - np.asarray(targets, dtype=np.float64)
    loss = 0.5 * float(np.sum(diff * diff)) / b
    return loss, diff / b


def batch_loss_and_grad(spec: MlpSpec, params: ParamVector, batch: Batch) -> Tuple[float, ParamVector]:
    """Mean batch loss and its exact gradient, by backpropagation."""
    layers = unpack(spec, params)
    pre, acts = _forward(spec, layers, batch.inputs)
    loss, delta = _loss_and_output_grad(spec, pre[-1], batch.targets)
    grads: List[np.ndarray] = [np.empty(0)] * (2 * spec.num_layers)
    for l in range(spec.num_layers - 1, -1, -1):
        w, _ = layers[l]
        grads[2 * l] = (acts[l].T @ delta).reshape(-1)
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ w.T) * _activate_grad(spec.activation, pre[l - 1], acts[l])
    return loss, np.concatenate(grads)


def batch_loss(spec: MlpSpec, params: ParamVector, batch: Batch) -> float:
    layers = unpack(spec, params)
    pre, _ = _forward(spec, layers, batch.inputs)
    loss, _ = _loss_and_output_grad(spec, pre[-1], batch.targets)
    return loss


def batch_grad(spec: MlpSpec, params: ParamVector, batch: Batch) -> ParamVector:
    return batch_loss_and_grad(spec, params, batch)[1]


# ── Finite-sum wrapper ───────────────────────────────────────────────


def dataset_batch(spec: MlpSpec, dataset: Dataset, rows: Optional[Sequence[int]] = None) -> Batch:
    """Batch over *rows* of *dataset* (all rows by default) with loss-appropriate targets."""
    idx = slice(None) if rows is None else np.asarray(rows)
    inputs = dataset.inputs[idx]
    labels = dataset.labels[idx]
    if spec.loss_kind == "mse":
        return Batch(inputs, np.eye(spec.classes)[labels])
    return Batch(inputs, labels)


class MlpProblem(FiniteSumProblem):
    """Components are fixed contiguous mini-batch blocks of the dataset's order.

    Reshuffling permutes the order in which blocks are visited, never their
    contents; ``batch_size=1`` gives one component per sample.
    """

    family = "mlp"

    def __init__(self, spec: MlpSpec, dataset: Dataset, batch_size: int):
        if spec.layer_sizes[0] != dataset.d_in:
            raise DimensionMismatchError(dataset.d_in, spec.layer_sizes[0], what="MLP input layer")
        if spec.classes < dataset.classes:
            raise ValueError(f"output width {spec.classes} < {dataset.classes} classes")
        if batch_size < 1 or dataset.size % batch_size:
            raise ValueError(f"batch_size {batch_size} must divide dataset size {dataset.size}")
        super().__init__(dataset.size // batch_size, spec.param_count)
        self.spec = spec
        self.dataset = dataset
        self.batch_size = batch_size
        if spec.loss_kind == "mse" and spec.classes != dataset.classes:
            raise ValueError("mse targets are one-hot, so output width must equal the class count")
        self.batches = [
            dataset_batch(spec, dataset, range(i * batch_size, (i + 1) * batch_size))
            for i in range(self.n)
        ]

    def component_value(self, i: int, x: ParamVector) -> float:
        self.check_index(i)
        return batch_loss(self.spec, x, self.batches[i])

    def component_grad(self, i: int, x: ParamVector) -> ParamVector:
        self.check_index(i)
        return batch_grad(self.spec, x, self.batches[i])

    def component_value_and_grad(self, i: int, x: ParamVector) -> Tuple[float, ParamVector]:
        self.check_index(i)
        return batch_loss_and_grad(self.spec, x, self.batches[i])

    @property
    def fingerprint(self) -> str:
        s = self.spec
        return digest(self.family, s.layer_sizes, s.activation, s.loss_kind, s.init_seed,
                      self.dataset.checksum, self.batch_size)


def as_finite_sum(spec: MlpSpec, dataset: Dataset, batch_size: int) -> MlpProblem:
    return MlpProblem(spec, dataset, batch_size)
