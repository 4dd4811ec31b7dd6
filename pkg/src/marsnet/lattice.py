"""Lattice-form piecewise-linear functions and their compilation into ReLU networks.

A lattice function is ``min_i max_{j in s_i} [1, x] . theta_j``. Binary max and
min are exact in ReLU form::

    max(a, b) = (a + b)/2 + R((a - b)/2) + R((b - a)/2)
    min(a, b) = (a + b)/2 - R((a - b)/2) - R((b - a)/2)

Values that may be negative are carried through a ReLU layer as the pair
``R(u) - R(-u) = u``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .network import IDENTITY, RELU, DenseNetwork, Layer

MAX, MIN = "max", "min"


@dataclass(frozen=True)
class AffinePiece:
    """``[1, x] . theta`` with ``theta = (theta_0, theta_1, ..., theta_d)``."""

    theta: tuple[float, ...]

    def __post_init__(self):
        theta = tuple(float(v) for v in self.theta)
        if len(theta) < 1:
            raise ValueError("theta needs at least the constant term")
        if not all(math.isfinite(v) for v in theta):
            raise ValueError("non-finite affine coefficient")
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return len(self.theta) - 1

    def __call__(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.d:
            raise ValueError(f"expected {self.d} inputs, got {x.shape[0]}")
        return float(self.theta[0] + np.dot(self.theta[1:], x))


@dataclass
class LatticePwl:
    d: int
    pieces: list[AffinePiece]
    groups: list[list[int]]

    def __post_init__(self):
        self.pieces = [p if isinstance(p, AffinePiece) else AffinePiece(tuple(p)) for p in self.pieces]
        self.groups = [[int(j) for j in g] for g in self.groups]
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.groups:
            raise ValueError("lattice needs at least one group")
        for p in self.pieces:
            if p.d != self.d:
                raise ValueError(f"piece has {p.d} inputs, lattice has {self.d}")
        for i, g in enumerate(self.groups):
            if not g:
                raise ValueError(f"group {i} is empty")
            for j in g:
                if not 0 <= j < len(self.pieces):
                    raise ValueError(f"group {i} references missing piece {j}")

    @property
    def max_group(self) -> int:
        return max(len(g) for g in self.groups)

    def depth_bound(self) -> int:
        return math.ceil(math.log2(len(self.groups))) + math.ceil(math.log2(self.max_group))

    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.pieces], dtype=np.float64).reshape(len(self.pieces), self.d + 1)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on an ``(N, d)`` matrix."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.d:
            raise ValueError(f"expected {self.d} inputs, got {x.shape[1]}")
        th = self.thetas()
        vals = th[:, 0] + x @ th[:, 1:].T
        return np.min(np.stack([vals[:, g].max(axis=1) for g in self.groups], axis=1), axis=1)

    def to_dict(self) -> dict:
        return {"d": self.d, "pieces": [list(p.theta) for p in self.pieces], "groups": self.groups}

    @classmethod
    def from_dict(cls, doc: dict) -> "LatticePwl":
        return cls(int(doc["d"]), [AffinePiece(tuple(p)) for p in doc["pieces"]], doc["groups"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "LatticePwl":
        return cls.from_dict(json.loads(text))


def eval_lattice(lat: LatticePwl, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != lat.d:
        raise ValueError(f"expected {lat.d} inputs, got {x.shape[0]}")
    return min(max(lat.pieces[j](x) for j in g) for g in lat.groups)


def max_affine_eval(pieces: Sequence[AffinePiece], x: Sequence[float]) -> float:
    if not pieces:
        raise ValueError("need at least one affine piece")
    return max(p(x) for p in pieces)


# --- network construction -------------------------------------------------

def affine_network(thetas: np.ndarray) -> DenseNetwork:
    """One identity layer computing ``theta_k0 + theta_k[1:] . x`` for every row k."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    return DenseNetwork([Layer(thetas[:, 1:], thetas[:, 0], IDENTITY)])


def _delay(net: DenseNetwork) -> DenseNetwork:
    """Add one ReLU stage that passes every output through unchanged."""
    last = net.layers[-1]
    k = last.a_out
    hidden = Layer(np.vstack([last.weights, -last.weights]), np.concatenate([last.bias, -last.bias]), RELU)
    readout = Layer(np.hstack([np.eye(k), -np.eye(k)]), np.zeros(k), IDENTITY)
    return DenseNetwork(net.layers[:-1] + [hidden, readout])


def _relu_stages(net: DenseNetwork) -> int:
    return sum(layer.activation == RELU for layer in net.layers)


def stack_parallel(nets: Sequence[DenseNetwork]) -> DenseNetwork:
    """Run networks side by side on a shared input; outputs are concatenated.

    Shallower networks are padded with passthrough stages so all depths agree.
    """
    if not nets:
        raise ValueError("nothing to stack")
    d = nets[0].input_dim
    if any(n.input_dim != d for n in nets):
        raise ValueError("networks disagree on input dimension")
    for n in nets:
        if any(layer.activation != RELU for layer in n.layers[:-1]):
            raise ValueError("hidden layers must all be ReLU to stack in parallel")
    depth = max(n.depth for n in nets)
    padded = []
    for n in nets:
        while n.depth < depth:
            n = _delay(n)
        padded.append(n)
    layers = []
    for k in range(depth):
        parts = [n.layers[k] for n in padded]
        w = np.vstack([p.weights for p in parts]) if k == 0 else block_diag(*[p.weights for p in parts])
        layers.append(Layer(w, np.concatenate([p.bias for p in parts]), parts[0].activation))
    return DenseNetwork(layers)


def _tournament_round(net: DenseNetwork, brackets: Sequence[Sequence[int]], op: str) -> tuple[DenseNetwork, list[list[int]]]:
    """Pair up outputs inside each bracket and reduce each pair with one gadget.

    ``brackets`` lists output indices that belong together. Odd members get a bye.
    Returns the new network and the brackets over its outputs.
    """
    sign = 1.0 if op == MAX else -1.0
    k = net.output_dim
    rows, readout, new_brackets = [], [], []
    out = 0
    for members in brackets:
        nb = []
        for s in range(0, len(members), 2):
            pair = members[s:s + 2]
            r = len(rows)
            e = np.eye(k)
            if len(pair) == 2:
                a, b = e[pair[0]], e[pair[1]]
                rows += [(a + b) / 2, -(a + b) / 2, (a - b) / 2, (b - a) / 2]
                readout.append((r, [1.0, -1.0, sign, sign]))
            else:
                rows += [e[pair[0]], -e[pair[0]]]
                readout.append((r, [1.0, -1.0]))
            nb.append(out)
            out += 1
        new_brackets.append(nb)
    g = np.array(rows)
    r_mat = np.zeros((out, len(rows)))
    for o, (start, coefs) in enumerate(readout):
        r_mat[o, start:start + len(coefs)] = coefs
    last = net.layers[-1]
    hidden = Layer(g @ last.weights, g @ last.bias, RELU)
    return DenseNetwork(net.layers[:-1] + [hidden, Layer(r_mat, np.zeros(out), IDENTITY)]), new_brackets


def _binary_gadget(left: DenseNetwork, right: DenseNetwork, op: str) -> DenseNetwork:
    if left.input_dim != right.input_dim:
        raise ValueError(f"input dimensions differ: {left.input_dim} vs {right.input_dim}")
    if left.output_dim != 1 or right.output_dim != 1:
        raise ValueError("gadget operands must produce a single output")
    net, _ = _tournament_round(stack_parallel([left, right]), [[0, 1]], op)
    return net


def max_gadget(left: DenseNetwork, right: DenseNetwork) -> DenseNetwork:
    """Network computing ``max(left(x), right(x))``."""
    return _binary_gadget(left, right, MAX)


def min_gadget(left: DenseNetwork, right: DenseNetwork) -> DenseNetwork:
    """Network computing ``min(left(x), right(x))``."""
    return _binary_gadget(left, right, MIN)


@dataclass
class DepthReport:
    gadget_stages: int  # ReLU layers in the compiled network
    affine_layers: int  # all layers, including the identity readout
    max_rounds: int
    min_rounds: int
    bound: int  # ceil(log2 M) + ceil(log2 max|s_i|)

    @property
    def within_bound(self) -> bool:
        return self.gadget_stages <= self.bound

    def to_dict(self) -> dict:
        return {
            "gadget_stages": self.gadget_stages,
            "affine_layers": self.affine_layers,
            "max_rounds": self.max_rounds,
            "min_rounds": self.min_rounds,
            "bound": self.bound,
        }


def compile_lattice(lat: LatticePwl) -> tuple[DenseNetwork, DepthReport]:
    """Compile to a ReLU network: max tournament inside each group, then min across groups.

    All gadgets of one tournament level share a single ReLU layer, so the
    network has one ReLU stage per level.
    """
    th = lat.thetas()
    slots = [j for g in lat.groups for j in g]
    net = affine_network(th[slots])
    brackets, pos = [], 0
    for g in lat.groups:
        brackets.append(list(range(pos, pos + len(g))))
        pos += len(g)

    max_rounds = 0
    while any(len(b) > 1 for b in brackets):
        net, brackets = _tournament_round(net, brackets, MAX)
        max_rounds += 1
    finals = [[b[0] for b in brackets]]
    min_rounds = 0
    while len(finals[0]) > 1:
        net, finals = _tournament_round(net, finals, MIN)
        min_rounds += 1
    report = DepthReport(_relu_stages(net), net.depth, max_rounds, min_rounds, lat.depth_bound())
    return net, report
