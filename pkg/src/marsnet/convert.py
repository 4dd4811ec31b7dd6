"""MARS model -> ReLU network conversion, function-preserving reshaping, and drift reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .network import IDENTITY, RELU, DenseNetwork, Layer
from .spline import BasisFunction, Direction, MarsModel

PROBE_LOW, PROBE_HIGH = -2.0, 3.0


@dataclass
class ConversionReport:
    hidden_width: int
    # unit index -> source basis function; None marks the placeholder unit of an intercept-only model
    mapping: list[BasisFunction | None]
    max_deviation: float
    probe_count: int

    def to_dict(self) -> dict:
        return {
            "hidden_width": self.hidden_width,
            "mapping": [
                None if b is None else
                {"unit": i, "dim": b.dim, "knot": b.knot, "direction": b.direction.name.lower()}
                for i, b in enumerate(self.mapping)
            ],
            "max_deviation": self.max_deviation,
            "probe_count": self.probe_count,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def probe_points(d: int, count: int = 1000, seed: int = 0,
                 low: float = PROBE_LOW, high: float = PROBE_HIGH) -> np.ndarray:
    return np.random.default_rng(seed).uniform(low, high, size=(count, d))


def mars_to_network(m: MarsModel, probes: int = 1000, seed: int = 0) -> tuple[DenseNetwork, ConversionReport]:
    """Build the d -> max(M, 1) -> 1 ReLU network computing exactly ``m``.

    Hidden unit i is ``ReLU(+x_j - t)`` for a positive basis and ``ReLU(-x_j + t)``
    for a negative one; the output layer carries the MARS coefficients and intercept.
    The report records the largest deviation from the model over random probes.
    """
    width = max(m.size, 1)
    w1 = np.zeros((width, m.d))
    b1 = np.zeros(width)
    for i, (_, b) in enumerate(m.terms):
        sign = 1.0 if b.direction == Direction.POSITIVE else -1.0
        w1[i, b.dim] = sign
        b1[i] = -sign * b.knot
    w2 = np.zeros((1, width))
    w2[0, :m.size] = m.coefficients
    net = DenseNetwork([Layer(w1, b1, RELU), Layer(w2, [m.intercept], IDENTITY)])

    mapping: list[BasisFunction | None] = list(m.basis) if m.size else [None]
    dev = 0.0
    if probes > 0:
        x = probe_points(m.d, probes, seed)
        dev = float(np.max(np.abs(net.predict(x)[:, 0] - m.predict(x))))
    return net, ConversionReport(width, mapping, dev, probes)


def _check_hidden(net: DenseNetwork, layer: int) -> None:
    if not 0 <= layer < net.depth:
        raise IndexError(f"layer index {layer} outside [0, {net.depth})")
    if layer == net.depth - 1:
        raise ValueError("the output layer cannot be widened")


def widen(net: DenseNetwork, layer: int, extra: int, jitter: float = 0.0, seed: int = 0) -> DenseNetwork:
    """Append ``extra`` units to hidden layer ``layer`` without changing the function.

    New units get zero incoming weights and bias and zero outgoing weights. Such
    units receive zero gradient under ReLU'(0) = 0; ``jitter > 0`` draws their
    incoming weights from U(-jitter, jitter) instead. Outgoing weights stay zero,
    so the output is still unchanged — only the new units' activations differ.
    """
    _check_hidden(net, layer)
    if extra < 0:
        raise ValueError("extra must be >= 0")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    out = net.copy()
    if extra == 0:
        return out
    cur, nxt = out.layers[layer], out.layers[layer + 1]
    new_w = np.zeros((extra, cur.a_in))
    if jitter > 0:
        new_w = np.random.default_rng(seed).uniform(-jitter, jitter, size=new_w.shape)
    out.layers[layer] = Layer(np.vstack([cur.weights, new_w]),
                              np.concatenate([cur.bias, np.zeros(extra)]), cur.activation)
    out.layers[layer + 1] = Layer(np.hstack([nxt.weights, np.zeros((nxt.a_out, extra))]),
                                  nxt.bias, nxt.activation)
    return DenseNetwork(out.layers)


def deepen(net: DenseNetwork, position: int) -> DenseNetwork:
    """Insert an identity-weighted ReLU layer so it becomes ``layers[position]``.

    Only valid right after a ReLU layer: identity followed by ReLU is the identity
    on nonnegative inputs but not on raw (possibly negative) features.
    """
    if not 1 <= position <= net.depth - 1:
        raise ValueError(f"position {position} must lie in [1, {net.depth - 1}]")
    prev = net.layers[position - 1]
    if prev.activation != RELU:
        raise ValueError(f"layer {position - 1} is not a ReLU layer")
    w = prev.a_out
    layers = [layer for layer in net.copy().layers]
    layers.insert(position, Layer(np.eye(w), np.zeros(w), RELU))
    return DenseNetwork(layers)


def reshape_to(net: DenseNetwork, target_widths: Sequence[int]) -> DenseNetwork:
    """Grow ``net`` to ``target_widths`` (input, hidden..., output) by deepen then widen.

    Existing hidden layers align with the leading target hidden widths; extra
    layers are inserted before the output layer.
    """
    target = [int(w) for w in target_widths]
    cur = net.widths
    if len(target) < 2 or target[0] != cur[0] or target[-1] != cur[-1]:
        raise ValueError(f"target {target} must keep input width {cur[0]} and output width {cur[-1]}")
    hidden_cur, hidden_tgt = cur[1:-1], target[1:-1]
    if len(hidden_tgt) < len(hidden_cur):
        raise ValueError(f"target depth {len(target) - 1} is below current depth {net.depth}")
    add = len(hidden_tgt) - len(hidden_cur)
    if add and not hidden_cur:
        raise ValueError("cannot deepen a network without a hidden ReLU layer")
    aligned = hidden_cur + [hidden_cur[-1] if hidden_cur else 0] * add
    for k, (have, want) in enumerate(zip(aligned, hidden_tgt)):
        if want < have:
            raise ValueError(f"target width {want} at hidden layer {k} is below current width {have}")
    out = net.copy()
    for _ in range(add):
        out = deepen(out, out.depth - 1)
    for k, (have, want) in enumerate(zip(aligned, hidden_tgt)):
        out = widen(out, k, want - have)
    return out


@dataclass
class LayerShift:
    layer: int
    w_delta_frobenius: float
    b_delta_norm: float
    relative_shift: float
    max_abs_change: float
    # largest change over weights that were nonzero initially (the converted +-1 entries)
    anchor_max_change: float


@dataclass
class ShiftReport:
    layers: list[LayerShift] = field(default_factory=list)

    CSV_FIELDS = ("layer", "w_delta_frobenius", "b_delta_norm", "relative_shift", "max_abs_change")

    def to_dict(self) -> dict:
        return {"layers": [asdict(r) for r in self.layers]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_FIELDS)
            for r in self.layers:
                w.writerow([r.layer] + [repr(float(getattr(r, f))) for f in self.CSV_FIELDS[1:]])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="") as fh:
            return [
                {k: (int(v) if k == "layer" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)
            ]


def parameter_shift_report(initial: DenseNetwork, trained: DenseNetwork, eps: float = 1e-12) -> ShiftReport:
    if initial.widths != trained.widths:
        raise ValueError(f"shape mismatch {initial.widths} vs {trained.widths}")
    rep = ShiftReport()
    for k, (a, b) in enumerate(zip(initial.layers, trained.layers)):
        dw = b.weights - a.weights
        db = b.bias - a.bias
        w_norm = float(np.linalg.norm(dw))
        anchors = a.weights != 0.0
        rep.layers.append(LayerShift(
            layer=k,
            w_delta_frobenius=w_norm,
            b_delta_norm=float(np.linalg.norm(db)),
            relative_shift=w_norm / (float(np.linalg.norm(a.weights)) + eps),
            max_abs_change=float(max(np.max(np.abs(dw), initial=0.0), np.max(np.abs(db), initial=0.0))),
            anchor_max_change=float(np.max(np.abs(dw[anchors]), initial=0.0)),
        ))
    return rep
