"""Dense feed-forward ReLU networks and plain mini-batch SGD on mean squared error."""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Layer:
    weights: np.ndarray  # (a_out, a_in)
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError("bias length differs from weight row count")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite layer parameters")

    @property
    def a_in(self) -> int:
        return self.weights.shape[1]

    @property
    def a_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class DenseNetwork:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k].a_in != self.layers[k - 1].a_out:
                raise ValueError(
                    f"layer {k} expects {self.layers[k].a_in} inputs but layer {k - 1} "
                    f"produces {self.layers[k - 1].a_out}"
                )
        if self.layers[-1].activation != IDENTITY:
            raise ValueError("output layer must use the identity activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].a_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].a_out

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.a_out for layer in self.layers]

    def copy(self) -> "DenseNetwork":
        return copy.deepcopy(self)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass: ``(N, a_1) -> (N, a_l)``."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        if h.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {h.shape[1]}")
        for layer in self.layers:
            h = _affine(h, layer.weights, layer.bias)
            if layer.activation == RELU:
                h = np.maximum(h, 0.0)
        return h

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "rows": layer.a_out,
                    "cols": layer.a_in,
                    "weights": layer.weights.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DenseNetwork":
        layers = []
        for ld in doc["layers"]:
            w = np.array(ld["weights"], dtype=np.float64).reshape(ld["rows"], ld["cols"])
            layers.append(Layer(w, ld["bias"], ld["activation"]))
        return cls(layers)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "DenseNetwork":
        return cls.from_dict(json.loads(text))


def _affine(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``h @ w.T + b`` accumulated input by input in a fixed order.

    BLAS may block the reduction differently for different shapes, so padding a
    layer with zero units could perturb the last bit. A sequential sum makes zero
    weights contribute exact zeros, and widened/deepened networks reproduce the
    original outputs bit for bit.
    """
    out = np.empty((h.shape[0], w.shape[0]))
    out[:] = b
    for k in range(w.shape[1]):
        out += h[:, k : k + 1] * w[:, k]
    return out


def forward(net: DenseNetwork, x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected a vector of length {net.input_dim}")
    return net.predict(x[None, :])[0]


def _as_2d(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def mse_loss(predictions, targets) -> float:
    p, t = _as_2d(predictions), _as_2d(targets)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean((p - t) ** 2))


@dataclass
class LayerGrad:
    weights: np.ndarray
    bias: np.ndarray


def _backprop(layers: Sequence[Layer], x: np.ndarray, y: np.ndarray) -> list[LayerGrad]:
    acts = [x]
    h = x
    for layer in layers:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == RELU:
            h = np.maximum(h, 0.0)
        acts.append(h)
    # d(mean over samples and outputs of squared error) / d(output)
    delta = 2.0 * (acts[-1] - y) / y.size
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        if layer.activation == RELU:
            delta = delta * (acts[k + 1] > 0.0)  # ReLU'(0) = 0
        grads[k] = LayerGrad(delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = delta @ layer.weights
    return grads


def gradients(net: DenseNetwork, x, y) -> list[LayerGrad]:
    """Exact gradient of batch MSE w.r.t. every weight and bias."""
    x = _as_2d(x)
    y = _as_2d(y)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != net.input_dim or y.shape[1] != net.output_dim or x.shape[0] != y.shape[0]:
        raise ValueError("batch shape does not match the network")
    return _backprop(net.layers, x, y)


def sgd_step(net: DenseNetwork, grads: Sequence[LayerGrad], lr: float) -> DenseNetwork:
    """Return a new network with ``param - lr * grad`` applied to every entry."""
    if len(grads) != len(net.layers):
        raise ValueError("gradient structure does not match the network")
    layers = []
    for layer, g in zip(net.layers, grads):
        layers.append(Layer(layer.weights - lr * g.weights, layer.bias - lr * g.bias, layer.activation))
    return DenseNetwork(layers)


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    total_seconds: float = 0.0
    final: DenseNetwork | None = None

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "seconds"])
            for e, (loss, sec) in enumerate(zip(self.losses, self.epoch_seconds), start=1):
                w.writerow([e, repr(loss), repr(sec)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.losses.append(float(row["train_loss"]))
                hist.epoch_seconds.append(float(row["seconds"]))
        hist.total_seconds = sum(hist.epoch_seconds)
        return hist


def train(
    net: DenseNetwork,
    x,
    y,
    config: TrainConfig,
    on_epoch: Callable[[int, DenseNetwork], None] | None = None,
) -> tuple[DenseNetwork, TrainHistory]:
    """Mini-batch SGD for ``config.epochs`` passes; logs full-training-set MSE after each.

    The input network is not modified. Batch order depends only on ``config.seed``,
    so two networks trained with the same config see identical batches.
    """
    x = _as_2d(x)
    y = _as_2d(y)
    if x.shape[1] != net.input_dim:
        raise ValueError(f"data has {x.shape[1]} features, network expects {net.input_dim}")
    if x.shape[0] != y.shape[0]:
        raise ValueError("feature and target counts differ")
    work = net.copy()
    layers = work.layers
    hist = TrainHistory()
    rng = np.random.default_rng(config.seed)
    n, bs, lr = x.shape[0], config.batch_size, config.lr
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        # overflow on a diverging run is reported below as TrainingDiverged
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(0, n, bs):
                idx = order[s:s + bs]
                for layer, g in zip(layers, _backprop(layers, x[idx], y[idx])):
                    layer.weights -= lr * g.weights
                    layer.bias -= lr * g.bias
            loss = mse_loss(work.predict(x), y)
        hist.epoch_seconds.append(time.perf_counter() - t0)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch} (lr={lr})")
        hist.losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, work)
    hist.total_seconds = time.perf_counter() - start
    hist.final = work
    return work, hist


def random_init(widths: Sequence[int], seed: int = 0) -> DenseNetwork:
    """Uniform weights on ``[-s, s]`` with ``s = sqrt(2 / fan_in)``; zero biases.

    Hidden layers use ReLU, the last layer is the identity regression head.
    """
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError("need at least two widths, all >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (a_in, a_out) in enumerate(zip(widths[:-1], widths[1:])):
        s = math.sqrt(2.0 / a_in)
        act = IDENTITY if k == len(widths) - 2 else RELU
        layers.append(Layer(rng.uniform(-s, s, size=(a_out, a_in)), np.zeros(a_out), act))
    return DenseNetwork(layers)
