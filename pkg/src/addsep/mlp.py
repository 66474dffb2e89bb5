"""Multilayer-perceptron surrogate: forward pass, backprop, Adam training, persistence.

A network is a chain of affine layers.  Hidden layers apply the activation
elementwise after the affine map; the final layer is affine only and has a
single output unit, so the network is a scalar function of its input vector.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core_math import ActivationKind
from .errors import DimensionMismatch, EmptySplit, FormatError, NonFiniteLoss, UnsupportedActivation

FORMAT_VERSION = 1
DEFAULT_HIDDEN = (26, 26)


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mlp:
    layers: tuple[Layer, ...]
    hidden_activation: ActivationKind = ActivationKind.SOFTPLUS

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatch("an Mlp needs at least one layer")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = _frozen(layer.weights), _frozen(layer.bias)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise DimensionMismatch(f"layer {k}: weights {w.shape} and bias {b.shape} disagree")
            if layers and w.shape[1] != layers[-1].rows:
                raise DimensionMismatch(
                    f"layer {k} expects {w.shape[1]} inputs but layer {k - 1} has {layers[-1].rows} outputs"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")
            layers.append(Layer(w, b))
        if layers[-1].rows != 1:
            raise DimensionMismatch("the output layer must have exactly one unit")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0].cols

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(layer.rows for layer in self.layers)

    @property
    def n_parameters(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    def __call__(self, x) -> float:
        return forward(self, x)

    def parameters(self) -> np.ndarray:
        """All weights and biases flattened in layer order (weights row-major, then bias)."""
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def with_parameters(self, flat) -> "Mlp":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_parameters,):
            raise DimensionMismatch(f"expected {self.n_parameters} parameters, got {flat.shape}")
        layers, pos = [], 0
        for layer in self.layers:
            r, c = layer.weights.shape
            w = flat[pos : pos + r * c].reshape(r, c)
            pos += r * c
            b = flat[pos : pos + r]
            pos += r
            layers.append(Layer(w, b))
        return Mlp(tuple(layers), self.hidden_activation)


def init_mlp(input_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed=0,
             activation: ActivationKind = ActivationKind.SOFTPLUS) -> Mlp:
    """Scaled-uniform initialisation: every weight and bias in ±sqrt(1/fan_in)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = [input_dim, *hidden, 1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Layer(w, b))
    return Mlp(tuple(layers), activation)


def _check_input(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.input_dim,):
        raise DimensionMismatch(f"network takes {net.input_dim} inputs, got shape {x.shape}")
    return x


def forward(net: Mlp, x) -> float:
    """Evaluate the surrogate at a single input vector."""
    u = _check_input(net, x)
    if u.ndim != 1:
        raise DimensionMismatch("forward takes one input vector; use forward_batch for many")
    act = net.hidden_activation
    for layer in net.layers[:-1]:
        u = act.value_of(layer.weights @ u + layer.bias)
    out = net.layers[-1]
    return float(out.weights[0] @ u + out.bias[0])


def forward_batch(net: Mlp, inputs) -> np.ndarray:
    """Evaluate the surrogate on an (n, d) array of inputs, returning n outputs."""
    u = _check_input(net, inputs)
    if u.ndim != 2:
        raise DimensionMismatch("forward_batch takes an (n, d) array")
    act = net.hidden_activation
    for layer in net.layers[:-1]:
        u = act.value_of(u @ layer.weights.T + layer.bias)
    out = net.layers[-1]
    return u @ out.weights[0] + out.bias[0]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d)
    outputs: np.ndarray  # (n,)

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.outputs, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"inputs {x.shape} and outputs {y.shape} do not pair up")
        if x.shape[0] == 0:
            raise ValueError("a dataset must not be empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.outputs[idx])


def mse(net: Mlp, data: Dataset) -> float:
    r = forward_batch(net, data.inputs) - data.outputs
    return float(np.mean(r * r))


def _loss_and_grads(weights, biases, x, y):
    """Batch MSE and its gradient for a softplus network given as raw arrays."""
    n = x.shape[0]
    sigs, post = [], [x]
    u = x
    for w, b in zip(weights[:-1], biases[:-1]):
        z = u @ w.T
        z += b
        e = np.exp(-np.abs(z))
        # softplus and its derivative share exp(-|z|)
        sigs.append(np.where(z >= 0, 1.0, e) / (1.0 + e))
        u = np.maximum(z, 0.0)
        u += np.log1p(e)
        post.append(u)
    r = u @ weights[-1][0]
    r += biases[-1][0] - y
    loss = float(r @ r) / n
    delta = (2.0 / n) * r[:, None]  # d loss / d output, shape (n, 1)
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gw[k] = delta.T @ post[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = delta @ weights[k]
            delta *= sigs[k - 1]
    return loss, gw, gb


def backward(net: Mlp, batch: Dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of the batch-mean squared error with respect to every layer's (weights, bias)."""
    if batch.dim != net.input_dim:
        raise DimensionMismatch(f"network takes {net.input_dim} inputs, batch has {batch.dim}")
    _check_activation(net)
    _, gw, gb = _loss_and_grads([l.weights for l in net.layers], [l.bias for l in net.layers],
                                batch.inputs, batch.outputs)
    return list(zip(gw, gb))


def input_gradient(net: Mlp, x) -> np.ndarray:
    """Backpropagate the output to the input vector (no tape involved)."""
    x = _check_input(net, x)
    _check_activation(net)
    pre, u = [], x
    for layer in net.layers[:-1]:
        z = layer.weights @ u + layer.bias
        pre.append(z)
        u = net.hidden_activation.value_of(z)
    g = net.layers[-1].weights[0].copy()
    for layer, z in zip(reversed(net.layers[:-1]), reversed(pre)):
        g = (g * net.hidden_activation.prime(z)) @ layer.weights
    return g


def _check_activation(net: Mlp) -> None:
    if net.hidden_activation is not ActivationKind.SOFTPLUS:
        raise UnsupportedActivation(net.hidden_activation.value)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    patience: int = 500
    validation_fraction: float = 0.2
    max_epochs: int = 50_000
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_improvement: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_validation_loss: float
    final_training_loss: float
    loss_history: list[tuple[int, float, float]] = field(default_factory=list, repr=False)


def split_dataset(data: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """One seeded shuffle; the first ceil(fraction * n) samples become the validation split."""
    n = len(data)
    n_val = math.ceil(cfg.validation_fraction * n)
    if n_val < 1 or n - n_val < 1:
        raise EmptySplit(f"{n} samples cannot be split with validation_fraction={cfg.validation_fraction}")
    order = rng.permutation(n)
    return data.subset(order[n_val:]), data.subset(order[:n_val])


def train(net: Mlp, data: Dataset, cfg: TrainConfig = TrainConfig()) -> tuple[Mlp, TrainReport]:
    """Adam on shuffled mini-batches with validation-based early stopping.

    Returns the parameters that achieved the lowest validation loss.  An epoch
    counts as an improvement only when the validation loss drops by more than
    ``cfg.min_improvement``; training stops after ``cfg.patience`` epochs
    without one, or at ``cfg.max_epochs``.
    """
    if data.dim != net.input_dim:
        raise DimensionMismatch(f"network takes {net.input_dim} inputs, data has {data.dim}")
    _check_activation(net)
    rng = np.random.default_rng(cfg.rng_seed)
    train_set, val_set = split_dataset(data, cfg, rng)

    flat = net.parameters().copy()
    weights, biases, pos = [], [], 0
    for layer in net.layers:
        r, c = layer.weights.shape
        weights.append(flat[pos : pos + r * c].reshape(r, c))
        pos += r * c
        biases.append(flat[pos : pos + r])
        pos += r
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    b1, b2 = cfg.beta1, cfg.beta2
    step = 0

    xt, yt = train_set.inputs, train_set.outputs
    xv, yv = val_set.inputs, val_set.outputs
    n_train = len(train_set)
    bs = min(cfg.batch_size, n_train)

    def val_loss() -> float:
        u = xv
        for w, b in zip(weights[:-1], biases[:-1]):
            z = u @ w.T + b
            u = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
        r = u @ weights[-1][0] + biases[-1][0] - yv
        return float(r @ r) / r.shape[0]

    best, best_epoch, best_flat = math.inf, 0, flat.copy()
    history: list[tuple[int, float, float]] = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, bs):
            idx = order[start : start + bs]
            loss, gw, gb = _loss_and_grads(weights, biases, xt[idx], yt[idx])
            total += loss * idx.shape[0]
            g = np.concatenate([a for pair in zip(gw, gb) for a in (pair[0].ravel(), pair[1])])
            step += 1
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**step)
            v_hat = v / (1.0 - b2**step)
            flat -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        train_loss = total / n_train
        vl = val_loss()
        history.append((epoch, train_loss, vl))
        if not (math.isfinite(train_loss) and math.isfinite(vl)) or not np.all(np.isfinite(flat)):
            raise NonFiniteLoss(f"loss diverged at epoch {epoch} (train={train_loss}, val={vl})")
        if vl < best - cfg.min_improvement:
            best, best_epoch = vl, epoch
            best_flat[:] = flat
        elif epoch - best_epoch >= cfg.patience:
            break

    trained = net.with_parameters(best_flat)
    report = TrainReport(
        epochs_run=epoch,
        best_epoch=best_epoch,
        best_validation_loss=best,
        final_training_loss=mse(trained, train_set),
        loss_history=history,
    )
    return trained, report


# --- persistence -----------------------------------------------------------


def model_to_dict(net: Mlp) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "activation": net.hidden_activation.value,
        "layers": [
            {
                "rows": layer.rows,
                "cols": layer.cols,
                "weights": [float(w).hex() for w in layer.weights.ravel()],
                "bias": [float(b).hex() for b in layer.bias],
            }
            for layer in net.layers
        ],
    }


def model_from_dict(doc: dict) -> Mlp:
    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise FormatError(f"unsupported format_version {doc['format_version']!r}")
        activation = ActivationKind.parse(doc["activation"])
        layers = []
        for k, entry in enumerate(doc["layers"]):
            rows, cols = int(entry["rows"]), int(entry["cols"])
            w = [float.fromhex(s) for s in entry["weights"]]
            b = [float.fromhex(s) for s in entry["bias"]]
            if rows < 1 or cols < 1 or len(w) != rows * cols or len(b) != rows:
                raise FormatError(f"layer {k}: declared {rows}x{cols} but found {len(w)} weights, {len(b)} biases")
            layers.append(Layer(np.array(w).reshape(rows, cols), np.array(b)))
        return Mlp(tuple(layers), activation)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed model document: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(net: Mlp, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(net), indent=1) + "\n")


def load_model(path) -> Mlp:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
