"""Tabular regression data: CSV loading, one-hot encoding, min-max scaling, splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised for malformed input files or inconsistent dataset requests."""


@dataclass
class RawTable:
    columns: list[str]
    kinds: list[str]
    rows: list[list]

    def __post_init__(self):
        if len(self.columns) != len(self.kinds):
            raise DataError("column names and kinds differ in length")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise DataError(f"row {i}: expected {len(self.columns)} cells, got {len(row)}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise DataError(f"column not found: {name!r}") from None


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs N >= 1 and d >= 1, got N={n}, d={d}")
        if self.targets.shape[0] != n:
            raise DataError("feature and target row counts differ")
        if len(self.feature_names) != d:
            raise DataError("feature-name count differs from d")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DataError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.targets[idx], list(self.feature_names))


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(text)
    return value


def load_csv(
    path,
    header: bool = True,
    categorical: Sequence[str] | None = None,
    delimiter: str = ",",
    columns: Sequence[str] | None = None,
) -> RawTable:
    """Read a delimited text file into a :class:`RawTable`.

    Columns named in ``categorical`` are kept as strings; every other cell must
    parse to a finite float. Without a header row, column names come from
    ``columns`` or default to ``c0, c1, ...``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if header:
        if not records:
            raise DataError("no rows")
        names = [c.strip() for c in records[0]]
        records = records[1:]
    else:
        names = None
    if not records:
        raise DataError("no rows")
    width = len(names) if names is not None else len(records[0])
    if columns is not None:
        if len(columns) != width:
            raise DataError(f"{len(columns)} column names supplied for {width} columns")
        names = list(columns)
    elif names is None:
        names = [f"c{j}" for j in range(width)]

    cat = set(categorical or ())
    unknown = cat - set(names)
    if unknown:
        raise DataError(f"column not found: {sorted(unknown)[0]!r}")
    kinds = [CATEGORICAL if n in cat else NUMERIC for n in names]

    first_data_line = 2 if header else 1
    rows = []
    for i, rec in enumerate(records):
        line = first_data_line + i
        if len(rec) != width:
            raise DataError(f"line {line}: ragged row with {len(rec)} cells, expected {width}")
        row = []
        for j, (cell, kind) in enumerate(zip(rec, kinds)):
            cell = cell.strip()
            if kind == CATEGORICAL:
                row.append(cell)
                continue
            try:
                row.append(_parse_float(cell))
            except ValueError:
                raise DataError(
                    f"line {line}, column {j} ({names[j]!r}): cannot parse {cell!r} as a number"
                ) from None
        rows.append(row)
    return RawTable(names, kinds, rows)


def encode_categorical(table: RawTable, column: str, policy: str = "one-hot") -> RawTable:
    """Replace a categorical column by one indicator column per distinct value.

    Categories are ordered by sorted value so the encoding is independent of row order.
    """
    if policy != "one-hot":
        raise DataError(f"unsupported encoding policy: {policy!r}")
    j = table.column_index(column)
    if table.kinds[j] != CATEGORICAL:
        raise DataError(f"column {column!r} is numeric")
    levels = sorted({row[j] for row in table.rows})
    new_cols = table.columns[:j] + [f"{column}={lv}" for lv in levels] + table.columns[j + 1:]
    new_kinds = table.kinds[:j] + [NUMERIC] * len(levels) + table.kinds[j + 1:]
    new_rows = []
    for row in table.rows:
        onehot = [1.0 if row[j] == lv else 0.0 for lv in levels]
        new_rows.append(row[:j] + onehot + row[j + 1:])
    return RawTable(new_cols, new_kinds, new_rows)


def to_dataset(table: RawTable, target: str) -> Dataset:
    t = table.column_index(target)
    bad = [c for c, k in zip(table.columns, table.kinds) if k != NUMERIC]
    if bad:
        raise DataError(f"unencoded categorical columns: {bad}")
    arr = np.array(table.rows, dtype=np.float64)
    keep = [j for j in range(len(table.columns)) if j != t]
    return Dataset(arr[:, keep], arr[:, t], [table.columns[j] for j in keep])


@dataclass
class Scaler:
    """Per-column min-max map onto [0, 1] for features and target."""

    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float
    constant_columns: list[int] = field(default_factory=list)
    fitted: bool = True

    @classmethod
    def fit(cls, data: Dataset) -> "Scaler":
        fmin = data.features.min(axis=0)
        fmax = data.features.max(axis=0)
        const = [int(j) for j in np.flatnonzero(fmax == fmin)]
        for j in const:
            log.warning("constant feature column %r mapped to 0.0", data.feature_names[j])
        tmin, tmax = float(data.targets.min()), float(data.targets.max())
        if tmax == tmin:
            log.warning("constant target mapped to 0.0")
        return cls(fmin, fmax, tmin, tmax, const)

    @property
    def d(self) -> int:
        return len(self.feature_min)

    @staticmethod
    def _span(lo, hi):
        span = np.asarray(hi - lo, dtype=np.float64)
        return np.where(span > 0, span, 1.0)

    def transform_features(self, x: np.ndarray) -> np.ndarray:
        span = self._span(self.feature_min, self.feature_max)
        out = (np.asarray(x, dtype=np.float64) - self.feature_min) / span
        const = self.feature_max == self.feature_min
        if np.any(const):
            out = np.where(const, 0.0, out)
        return out

    def inverse_features(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self._span(self.feature_min, self.feature_max) + self.feature_min

    def transform_targets(self, y: np.ndarray) -> np.ndarray:
        if self.target_max == self.target_min:
            return np.zeros_like(np.asarray(y, dtype=np.float64))
        return (np.asarray(y, dtype=np.float64) - self.target_min) / (self.target_max - self.target_min)

    def inverse_targets(self, z: np.ndarray) -> np.ndarray:
        span = self.target_max - self.target_min
        return np.asarray(z) * (span if span > 0 else 1.0) + self.target_min

    def to_dict(self) -> dict:
        return {
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "target_min": self.target_min,
            "target_max": self.target_max,
        }


def normalize(data: Dataset, scaler: Scaler | None = None) -> tuple[Dataset, Scaler]:
    """Min-max scale features and target; fit a scaler on ``data`` unless one is given."""
    if scaler is None:
        scaler = Scaler.fit(data)
    elif scaler.d != data.d:
        raise DataError(f"scaler has {scaler.d} columns, dataset has {data.d}")
    out = Dataset(
        scaler.transform_features(data.features),
        scaler.transform_targets(data.targets),
        list(data.feature_names),
    )
    return out, scaler


def split_shuffle(data: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must lie in (0, 1), got {train_fraction}")
    if data.n < 2:
        raise DataError("need at least 2 rows to split")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = int(math.floor(train_fraction * data.n))
    n_train = min(max(n_train, 1), data.n - 1)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


@dataclass
class DatasetManifest:
    path: str
    target: str
    categorical: list[str] = field(default_factory=list)
    header: bool = True
    delimiter: str = ","
    columns: list[str] | None = None
    seed: int = 0
    train_fraction: float = 0.7

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        preset = d.get("preset")
        base = PRESETS[preset](d.get("path", "")) if preset else None
        if base is None:
            return cls(**{k: v for k, v in d.items() if k != "preset"})
        return replace(base, **{k: v for k, v in d.items() if k != "preset"})


ABALONE_COLUMNS = [
    "sex", "length", "diameter", "height", "whole_weight",
    "shucked_weight", "viscera_weight", "shell_weight", "rings",
]


def abalone_manifest(path, seed: int = 0) -> DatasetManifest:
    """UCI ``abalone.data``: no header, sex is categorical, target is rings."""
    return DatasetManifest(str(path), "rings", ["sex"], header=False,
                           columns=list(ABALONE_COLUMNS), seed=seed)


def wine_manifest(path, seed: int = 0) -> DatasetManifest:
    """UCI ``winequality-*.csv``: semicolon separated with header, target is quality."""
    return DatasetManifest(str(path), "quality", [], header=True, delimiter=";", seed=seed)


PRESETS = {"abalone": abalone_manifest, "wine": wine_manifest}


def load_dataset(manifest: DatasetManifest) -> Dataset:
    table = load_csv(manifest.path, header=manifest.header, categorical=manifest.categorical,
                     delimiter=manifest.delimiter, columns=manifest.columns)
    for col in manifest.categorical:
        table = encode_categorical(table, col)
    return to_dataset(table, manifest.target)


def prepare(manifest: DatasetManifest, seed: int | None = None) -> tuple[Dataset, Dataset, Scaler]:
    """Load, shuffle-split and min-max normalize; the scaler is fit on the train split only."""
    data = load_dataset(manifest)
    seed = manifest.seed if seed is None else seed
    train, test = split_shuffle(data, manifest.train_fraction, seed)
    train, scaler = normalize(train)
    test, _ = normalize(test, scaler)
    return train, test, scaler


def synthetic_additive(n: int, d: int, n_knots: int = 2, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Random additive hinge function on [0, 1]^d, useful as a stand-in regression task."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, d))
    y = np.zeros(n)
    for j in range(d):
        y += rng.normal() * 0.3 * x[:, j]
        for t in rng.uniform(0.1, 0.9, size=n_knots):
            y += rng.normal() * 0.5 * np.maximum(x[:, j] - t, 0.0)
    y += noise * rng.normal(size=n)
    return Dataset(x, y, [f"x{j}" for j in range(d)])
