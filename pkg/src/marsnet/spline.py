"""First-order MARS: forward adaptation and backward pruning under GCV.

The fitted model is additive, ``f(x) = b0 + sum_m b_m * h_m(x)`` where every
``h_m`` is a single hinge ``max(x_j - t, 0)`` or ``max(t - x_j, 0)`` with the
knot ``t`` taken from the training values of dimension ``j``.
"""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset

# Relative tolerance below which two GCV values count as tied; ties are then
# broken by (dimension, knot, direction) so selection is reproducible.
TIE_RTOL = 1e-9


class Direction(enum.IntEnum):
    POSITIVE = 1  # max(x_j - t, 0)
    NEGATIVE = -1  # max(t - x_j, 0)


@dataclass(frozen=True, order=True)
class BasisFunction:
    dim: int
    knot: float
    direction: Direction

    def sort_key(self):
        return (self.dim, self.knot, -int(self.direction))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on an ``(N, d)`` matrix."""
        col = np.asarray(x, dtype=np.float64)[:, self.dim]
        if self.direction == Direction.POSITIVE:
            return np.maximum(col - self.knot, 0.0)
        return np.maximum(self.knot - col, 0.0)


@dataclass
class FitConfig:
    max_terms: int = 20
    penalty: float = 3.0
    knot_subsample: int | None = None
    train_fraction: float = 1.0
    fast: bool = False

    def __post_init__(self):
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if self.knot_subsample is not None and self.knot_subsample < 2:
            raise ValueError("knot_subsample must be >= 2 when set")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class GcvRecord:
    size: int
    knot_count: int
    rss: float
    c: float
    n: int
    gcv: float
    stage: str = "forward"

    def recompute(self) -> float:
        return gcv_from_rss(self.rss, self.c, self.n)


@dataclass
class MarsModel:
    intercept: float
    terms: list[tuple[float, BasisFunction]]
    d: int
    fit_config: FitConfig | None = None
    gcv_trail: list[GcvRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for coef, b in self.terms:
            if not math.isfinite(coef):
                raise ValueError("non-finite coefficient")
            if not 0 <= b.dim < self.d:
                raise ValueError(f"basis dimension {b.dim} outside [0, {self.d})")
            key = (b.dim, b.knot, b.direction)
            if key in seen:
                raise ValueError(f"duplicate basis {key}")
            seen.add(key)

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def basis(self) -> list[BasisFunction]:
        return [b for _, b in self.terms]

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=np.float64)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.d:
            raise ValueError(f"expected {self.d} input columns, got {x.shape[1]}")
        out = np.full(x.shape[0], self.intercept)
        for coef, b in self.terms:
            out += coef * b.evaluate(x)
        return out

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "terms": [
                {"dim": b.dim, "knot": b.knot, "direction": b.direction.name.lower(), "coef": c}
                for c, b in self.terms
            ],
            "d": self.d,
            "fit_config": asdict(self.fit_config) if self.fit_config else None,
            "gcv_trail": [asdict(r) for r in self.gcv_trail],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarsModel":
        terms = [
            (float(t["coef"]), BasisFunction(int(t["dim"]), float(t["knot"]),
                                             Direction[t["direction"].upper()]))
            for t in doc["terms"]
        ]
        cfg = FitConfig(**doc["fit_config"]) if doc.get("fit_config") else None
        trail = [GcvRecord(**r) for r in doc.get("gcv_trail", [])]
        return cls(float(doc["intercept"]), terms, int(doc["d"]), cfg, trail)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "MarsModel":
        return cls.from_dict(json.loads(text))


def ramp(x: float) -> float:
    return x if x >= 0 else 0.0


def eval_basis(b: BasisFunction, x: Sequence[float]) -> float:
    if not 0 <= b.dim < len(x):
        raise IndexError(f"basis dimension {b.dim} out of range for input of length {len(x)}")
    u = float(x[b.dim]) - b.knot
    return ramp(u) if b.direction == Direction.POSITIVE else ramp(-u)


def eval_model(m: MarsModel, x: Sequence[float]) -> float:
    if len(x) != m.d:
        raise ValueError(f"expected input of length {m.d}, got {len(x)}")
    total = m.intercept
    for coef, b in m.terms:
        total += coef * eval_basis(b, x)
    return total


def effective_params(m: int, knot_count: int, penalty: float) -> float:
    """Effective parameter count: one per coefficient plus ``penalty`` per knot."""
    if m < 0:
        raise ValueError("basis count must be nonnegative")
    return (m + 1) + penalty * knot_count


def gcv_from_rss(rss: float, c: float, n: int) -> float:
    if n <= 0:
        raise ValueError("N must be positive")
    if c >= n:
        raise ValueError("GCV undefined: effective parameters exceed sample count")
    return rss / (1.0 - c / n) ** 2


def gcv(targets, predictions, c: float, n: int | None = None) -> float:
    y = np.asarray(targets, dtype=np.float64)
    f = np.asarray(predictions, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError("targets and predictions differ in length")
    n = len(y) if n is None else n
    return gcv_from_rss(float(np.sum((y - f) ** 2)), c, n)


@dataclass
class LstsqResult:
    coef: np.ndarray
    rss: float
    rank: int
    rank_deficient: bool


def least_squares(design: np.ndarray, targets: np.ndarray) -> LstsqResult:
    """Minimum-norm least squares via the SVD; flags rank deficiency."""
    a = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("least_squares: non-finite entries")
    if a.ndim == 1:
        a = a[:, None]
    coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return LstsqResult(coef, float(resid @ resid), int(rank), int(rank) < a.shape[1])


def _design(x: np.ndarray, basis: Sequence[BasisFunction]) -> np.ndarray:
    out = np.empty((x.shape[0], len(basis) + 1))
    out[:, 0] = 1.0
    for k, b in enumerate(basis, start=1):
        out[:, k] = b.evaluate(x)
    return out


def _knot_count(basis: Iterable[BasisFunction]) -> int:
    return len({(b.dim, b.knot) for b in basis})


def candidate_knots(column: np.ndarray, cap: int | None = None, presorted: bool = False) -> np.ndarray:
    """Distinct sample values of one dimension, optionally thinned to ``cap`` order statistics."""
    if presorted:
        keep = np.empty(len(column), dtype=bool)
        keep[0] = True
        np.not_equal(column[1:], column[:-1], out=keep[1:])
        values = column[keep]
    else:
        values = np.unique(column)
    if cap is not None and len(values) > cap:
        idx = np.unique(np.round(np.linspace(0, len(values) - 1, cap)).astype(int))
        values = values[idx]
    return values


def _pair_halves(j: int, t: float, lo: float, hi: float) -> list[BasisFunction]:
    # A half that is identically zero on the training data is dropped.
    halves = []
    if t < hi:
        halves.append(BasisFunction(j, t, Direction.POSITIVE))
    if t > lo:
        halves.append(BasisFunction(j, t, Direction.NEGATIVE))
    return halves


@dataclass
class _State:
    basis: list[BasisFunction]
    fit: LstsqResult
    record: GcvRecord


def _evaluate(x, y, basis, penalty, stage) -> _State | None:
    n = x.shape[0]
    c = effective_params(len(basis), _knot_count(basis), penalty)
    if c >= n:
        return None
    fit = least_squares(_design(x, basis), y)
    rec = GcvRecord(len(basis), _knot_count(basis), fit.rss, c, n, gcv_from_rss(fit.rss, c, n), stage)
    return _State(list(basis), fit, rec)


def _record(basis, rss, penalty, n, stage) -> GcvRecord:
    kc = _knot_count(basis)
    c = effective_params(len(basis), kc, penalty)
    return GcvRecord(len(basis), kc, rss, c, n, gcv_from_rss(rss, c, n), stage)


def _refit(x, y, basis, d, config=None, record=None) -> MarsModel:
    coef = least_squares(_design(x, basis), y).coef
    terms = [(float(c), b) for c, b in zip(coef[1:], basis)]
    return MarsModel(float(coef[0]), terms, d, config, [record] if record else [])


def _tie_floor(null_gcv: float, y: np.ndarray) -> float:
    # Absolute scale for tie detection; the mean square of y keeps it nonzero
    # when the targets are constant and every model fits them exactly.
    return max(null_gcv, float(np.mean(y * y)))


def _tie_tol(best: float, null_gcv: float) -> float:
    return TIE_RTOL * best + 1e-12 * null_gcv


def _pick(scored: list[tuple[float, tuple, object]], null_gcv: float):
    """Lowest GCV; near-ties resolved by the candidate's sort key."""
    best = min(s[0] for s in scored)
    tol = _tie_tol(best, null_gcv)
    return min((s for s in scored if s[0] <= best + tol), key=lambda s: s[1])


class _Candidates:
    """Knot grid per dimension and the halves each (dimension, knot) contributes."""

    def __init__(self, x: np.ndarray, cap: int | None, orders: np.ndarray | None = None):
        d = x.shape[1]
        if orders is None:
            self.knots = [candidate_knots(x[:, j], cap) for j in range(d)]
            self.bounds = [(float(x[:, j].min()), float(x[:, j].max())) for j in range(d)]
        else:
            # reuse the per-column sort order instead of sorting again
            cols = [x[orders[j], j] for j in range(d)]
            self.knots = [candidate_knots(c, cap, presorted=True) for c in cols]
            self.bounds = [(float(c[0]), float(c[-1])) for c in cols]

    def halves(self, j: int, t: float) -> list[BasisFunction]:
        lo, hi = self.bounds[j]
        return _pair_halves(j, t, lo, hi)

    def padded(self):
        kmax = max(len(k) for k in self.knots)
        grid = np.full((len(self.knots), kmax), np.nan)
        count = np.zeros((len(self.knots), kmax), dtype=np.int64)
        for j, ks in enumerate(self.knots):
            lo, hi = self.bounds[j]
            grid[j, : len(ks)] = ks
            count[j, : len(ks)] = (ks < hi).astype(int) + (ks > lo).astype(int)
        return grid, count


def _forward_exact(x, y, config, cands: _Candidates):
    n, d = x.shape
    state = _evaluate(x, y, [], config.penalty, "forward")
    null_gcv = _tie_floor(state.record.gcv, y)
    path = [(list(state.basis), state.record)]
    while len(state.basis) + 2 <= config.max_terms:
        used = {(b.dim, b.knot) for b in state.basis}
        scored = []
        for j in range(d):
            for t in cands.knots[j]:
                t = float(t)
                if (j, t) in used:
                    continue
                halves = cands.halves(j, t)
                if not halves:
                    continue
                cand = _evaluate(x, y, state.basis + halves, config.penalty, "forward")
                if cand is None:
                    continue
                scored.append((cand.record.gcv, (j, t), cand))
        if not scored:
            break
        # No early exit on a worse GCV: the pass always grows to max_terms and
        # leaves model selection to the backward pass.
        _, _, cand = _pick(scored, null_gcv)
        state = cand
        path.append((list(state.basis), state.record))
    return path


def _forward_fast(x, y, config, cands: _Candidates, orders: np.ndarray):
    from . import _fastmars

    n, d = x.shape
    grid, count = cands.padded()
    nknots = np.array([len(k) for k in cands.knots], dtype=np.int64)
    basis: list[BasisFunction] = []
    centered = y - y.mean()
    rec = _record(basis, float(centered @ centered), config.penalty, n, "forward")
    path = [(list(basis), rec)]
    js, ks, rss = _fastmars.forward_path(
        np.ascontiguousarray(x), np.ascontiguousarray(y), orders, np.nan_to_num(grid), nknots,
        count, config.max_terms, config.penalty, TIE_RTOL, _tie_floor(rec.gcv, y),
    )
    for j, k, r in zip(js, ks, rss):
        basis = basis + cands.halves(int(j), float(grid[j, k]))
        path.append((list(basis), _record(basis, float(r), config.penalty, n, "forward")))
    return path


def _forward(x, y, config):
    if x.shape[0] < 2:
        raise ValueError("forward pass needs at least 2 samples")
    if config.fast:
        orders = np.ascontiguousarray(np.argsort(x, axis=0).T)
        return _forward_fast(x, y, config, _Candidates(x, config.knot_subsample, orders), orders)
    return _forward_exact(x, y, config, _Candidates(x, config.knot_subsample))


def forward_pass(train: Dataset, config: FitConfig) -> list[tuple[MarsModel, GcvRecord]]:
    """Grow the model one reflection pair at a time, each step minimising GCV.

    Returns every intermediate model (intercept-only first) with its GCV record.
    """
    x, y = train.features, train.targets
    return [(_refit(x, y, basis, train.d, config, rec), rec) for basis, rec in _forward(x, y, config)]


def _backward_exact(x, y, basis, config, start=None):
    state = _evaluate(x, y, basis, config.penalty, "backward")
    if start is not None:
        state = _State(state.basis, state.fit, replace(start, stage="backward"))
    null_gcv = _tie_floor(_evaluate(x, y, [], config.penalty, "backward").record.gcv, y)
    trail = [state.record]
    best = state
    while state.basis:
        scored = []
        for i, b in enumerate(state.basis):
            rest = state.basis[:i] + state.basis[i + 1:]
            cand = _evaluate(x, y, rest, config.penalty, "backward")
            scored.append((cand.record.gcv, b.sort_key(), cand))
        _, _, state = _pick(scored, null_gcv)
        trail.append(state.record)
        # Prefer the smaller model on ties.
        if state.record.gcv <= best.record.gcv + _tie_tol(best.record.gcv, null_gcv):
            best = state
    return best.basis, best.record, trail


def _backward_fast(x, y, basis, config, start=None):
    from . import _fastmars

    n = x.shape[0]
    if n <= len(basis) + 1:
        return _backward_exact(x, y, basis, config, start)
    # one R-only factorisation of [design | y] yields R, Q^T y and the residual norm
    aug = np.empty((n, len(basis) + 2))
    aug[:, :-1] = _design(x, basis)
    aug[:, -1] = y
    raug = np.linalg.qr(aug, mode="r")
    m = len(basis) + 1
    rmat, z = raug[:m, :m], raug[:m, m].copy()
    base = float(raug[m, m] ** 2) if raug.shape[0] > m else 0.0
    centered = y - y.mean()
    null_gcv = _tie_floor(_record([], float(centered @ centered), config.penalty, n, "backward").gcv, y)
    groups = {}
    knot_id = np.array([-1] + [groups.setdefault((b.dim, b.knot), len(groups)) for b in basis],
                       dtype=np.int64)
    keys = sorted(range(len(basis)), key=lambda i: basis[i].sort_key())
    rank = np.zeros(len(basis) + 1, dtype=np.int64)
    rank[np.array(keys, dtype=np.int64) + 1] = np.arange(len(basis))
    if basis:
        dropped, rss_after, start_rss = _fastmars.backward_path(
            np.ascontiguousarray(rmat), z, base, n, config.penalty, knot_id, rank, TIE_RTOL, null_gcv
        )
    else:
        dropped, rss_after, start_rss = [], [], base
    current = list(basis)
    if start is not None:
        rec = replace(start, stage="backward")
    else:
        rec = _record(current, float(start_rss), config.penalty, n, "backward")
    trail = [rec]
    best = (list(current), rec)
    for col, r in zip(dropped, rss_after):
        gone = basis[int(col) - 1]
        current = [b for b in current if b is not gone]
        rec = _record(current, float(r), config.penalty, n, "backward")
        trail.append(rec)
        if rec.gcv <= best[1].gcv + _tie_tol(best[1].gcv, null_gcv):
            best = (list(current), rec)
    return best[0], best[1], trail


def _backward(x, y, basis, config, start: GcvRecord | None = None):
    """Prune ``basis``; ``start`` is the forward record of the full model, reused as the
    first backward record so that both passes report the same GCV for it."""
    return (_backward_fast if config.fast else _backward_exact)(x, y, basis, config, start)


def backward_prune(candidates, train: Dataset, config: FitConfig) -> MarsModel:
    """Greedy single-basis deletion from the largest forward model; keep the GCV minimiser."""
    if not candidates:
        raise ValueError("no forward-pass models to prune")
    x, y = train.features, train.targets
    basis, rec, trail = _backward(x, y, candidates[-1][0].basis, config, candidates[-1][1])
    model = _refit(x, y, basis, train.d, config)
    model.gcv_trail = trail
    return model


@dataclass
class FitResult:
    model: MarsModel
    seconds: float
    trail: list[GcvRecord]
    fitted: np.ndarray


def fit_mars(train: Dataset, config: FitConfig | None = None) -> FitResult:
    """Forward pass then backward pruning on the leading ``train_fraction`` of the rows.

    ``trail`` holds the forward records followed by the backward records; the
    returned model is the backward model with the smallest GCV.
    """
    config = config or FitConfig()
    start = time.perf_counter()
    n_fit = max(1, int(math.floor(config.train_fraction * train.n)))
    data = train if n_fit == train.n else train.subset(slice(0, n_fit))
    x, y = data.features, data.targets
    if data.n == 1:
        model = MarsModel(float(y[0]), [], data.d, config, [])
        return FitResult(model, time.perf_counter() - start, [], y.copy())
    path = _forward(x, y, config)
    basis, _, back = _backward(x, y, path[-1][0], config, path[-1][1])
    design = _design(x, basis)
    fit = least_squares(design, y)
    seconds = time.perf_counter() - start
    trail = [rec for _, rec in path] + back
    terms = [(float(c), b) for c, b in zip(fit.coef[1:], basis)]
    model = MarsModel(float(fit.coef[0]), terms, data.d, config, trail)
    return FitResult(model, seconds, trail, design @ fit.coef)


@dataclass
class FeatureImportance:
    names: list[str]
    importance: np.ndarray
    knots: list[list[float]]
    ranking: list[int]

    def rows(self) -> list[dict]:
        rank_of = {j: r + 1 for r, j in enumerate(self.ranking)}
        return [
            {"dim": j, "name": self.names[j], "importance": float(self.importance[j]),
             "rank": rank_of[j], "knots": list(self.knots[j])}
            for j in range(len(self.names))
        ]


def feature_importance(m: MarsModel, names: Sequence[str] | None = None) -> FeatureImportance:
    """Per-dimension sum of absolute coefficients, with the knots used in that dimension."""
    names = list(names) if names is not None else [f"x{j}" for j in range(m.d)]
    imp = np.zeros(m.d)
    knots: list[set] = [set() for _ in range(m.d)]
    for coef, b in m.terms:
        imp[b.dim] += abs(coef)
        knots[b.dim].add(b.knot)
    ranking = sorted(range(m.d), key=lambda j: (-imp[j], j))
    return FeatureImportance(names, imp, [sorted(k) for k in knots], ranking)
