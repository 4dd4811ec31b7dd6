import csv
import os
from pathlib import Path

import numpy as np
import pytest

from marsnet.data import synthetic_additive

ROOT = Path(__file__).resolve().parents[1]


def write_csv(path, features, targets, names=None, target="y", delimiter=","):
    names = names or [f"x{j}" for j in range(features.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(list(names) + [target])
        for row, t in zip(features, targets):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    return Path(path)


@pytest.fixture
def synthetic_csv(tmp_path):
    ds = synthetic_additive(600, 4, noise=0.05, seed=11)
    return write_csv(tmp_path / "synthetic.csv", ds.features, ds.targets)


def dataset_path(env_var, *candidates):
    """Location of an externally supplied dataset, or None when it is not available."""
    value = os.environ.get(env_var)
    if value:
        return Path(value) if Path(value).is_file() else None
    for c in candidates:
        p = ROOT / "data" / c
        if p.is_file():
            return p
    return None


ABALONE = dataset_path("MARSNET_ABALONE", "abalone.data", "abalone.csv")
WINE = dataset_path("MARSNET_WINE", "winequality-white.csv", "winequality-red.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# repeated at the end of the run so the verdicts survive output capture.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
