import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from marsnet.data import (
    ABALONE_COLUMNS,
    CATEGORICAL,
    DataError,
    Dataset,
    DatasetManifest,
    RawTable,
    encode_categorical,
    load_csv,
    load_dataset,
    normalize,
    prepare,
    split_shuffle,
    to_dataset,
)

from conftest import write_csv


def _ds(x, y=None):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.arange(len(x), dtype=float) if y is None else y
    return Dataset(x, y, [f"x{j}" for j in range(x.shape[1])])


def test_load_small_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,2\n3,4\n")
    t = load_csv(p)
    assert t.columns == ["a", "b"] and t.n_rows == 2
    assert t.rows == [[1.0, 2.0], [3.0, 4.0]]


def test_load_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="no rows"):
        load_csv(empty)
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "missing.csv")
    ragged = tmp_path / "r.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="line 3"):
        load_csv(ragged)
    bad = tmp_path / "b.csv"
    bad.write_text("a,b\n1,2\n3,zz\n")
    with pytest.raises(DataError, match=r"line 3, column 1"):
        load_csv(bad)
    nan = tmp_path / "n.csv"
    nan.write_text("a\nnan\n")
    with pytest.raises(DataError):
        load_csv(nan)


def test_headerless_and_delimiter(tmp_path):
    p = tmp_path / "h.txt"
    p.write_text("M;1.5;3\nF;2.5;4\n")
    t = load_csv(p, header=False, delimiter=";", categorical=["c0"])
    assert t.columns == ["c0", "c1", "c2"] and t.kinds[0] == CATEGORICAL
    t = load_csv(p, header=False, delimiter=";", columns=["sex", "v", "y"], categorical=["sex"])
    assert t.rows[1] == ["F", 2.5, 4.0]


def test_one_hot_examples():
    t = RawTable(["s", "v"], [CATEGORICAL, "numeric"], [["M", 1.0], ["F", 2.0], ["I", 3.0], ["M", 4.0]])
    enc = encode_categorical(t, "s")
    assert enc.columns == ["s=F", "s=I", "s=M", "v"]
    arr = np.array(enc.rows)
    np.testing.assert_array_equal(arr[:, :3].sum(axis=1), 1.0)
    np.testing.assert_array_equal(arr[:, 3], [1, 2, 3, 4])
    single = encode_categorical(RawTable(["s"], [CATEGORICAL], [["a"], ["a"]]), "s")
    assert single.rows == [[1.0], [1.0]]
    with pytest.raises(DataError):
        encode_categorical(t, "v")
    with pytest.raises(DataError):
        encode_categorical(t, "zzz")
    with pytest.raises(DataError):
        to_dataset(t, "v")  # still has an unencoded column


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.array([[np.inf]]), [1.0], ["a"])
    with pytest.raises(DataError):
        Dataset(np.ones((2, 2)), [1.0, 2.0], ["a"])
    with pytest.raises(DataError):
        Dataset(np.ones((2, 1)), [1.0], ["a"])


def test_normalize_examples():
    train, sc = normalize(_ds([0.0, 5.0, 10.0], np.array([1.0, 2.0, 3.0])))
    np.testing.assert_array_equal(train.features[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(train.targets, [0.0, 0.5, 1.0])
    unit = _ds([0.0, 0.25, 1.0])
    np.testing.assert_allclose(normalize(unit)[0].features, unit.features, atol=1e-15)
    test, _ = normalize(_ds([12.0]), sc)
    assert test.features[0, 0] == pytest.approx(1.2)


def test_constant_column_warns(caplog):
    with caplog.at_level(logging.WARNING):
        out, sc = normalize(_ds(np.column_stack([np.full(4, 3.0), np.arange(4.0)])))
    assert "constant" in caplog.text
    np.testing.assert_array_equal(out.features[:, 0], 0.0)
    assert sc.constant_columns == [0]


def test_scaler_dimension_mismatch():
    _, sc = normalize(_ds(np.ones((3, 2)) * np.arange(3)[:, None]))
    with pytest.raises(DataError):
        normalize(_ds([1.0, 2.0]), sc)


@settings(max_examples=50)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_scaler_round_trip(x):
    data = _ds(x)
    out, sc = normalize(data)
    assert np.all((out.features >= 0) & (out.features <= 1))
    back = sc.inverse_features(out.features)
    keep = np.ptp(x, axis=0) > 0
    # relative to the column magnitude: a small entry in a wide column inherits its rounding
    scale = np.maximum(1.0, np.abs(x[:, keep]).max(axis=0))
    assert np.all(np.abs(back[:, keep] - x[:, keep]) <= 1e-12 * scale)


def test_split_examples():
    data = _ds(np.arange(10.0))
    tr, te = split_shuffle(data, 0.7, seed=3)
    assert (tr.n, te.n) == (7, 3)
    tr2, _ = split_shuffle(data, 0.7, seed=3)
    np.testing.assert_array_equal(tr.features, tr2.features)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(DataError):
            split_shuffle(data, bad)
    with pytest.raises(DataError):
        split_shuffle(_ds([1.0]), 0.5)


@settings(max_examples=50)
@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_partition(n, frac, seed):
    data = _ds(np.arange(float(n)), np.arange(float(n)) * 2)
    tr, te = split_shuffle(data, frac, seed)
    assert tr.n + te.n == n
    assert tr.n == min(max(int(np.floor(frac * n)), 1), n - 1)
    ids = np.concatenate([tr.features[:, 0], te.features[:, 0]])
    np.testing.assert_array_equal(np.sort(ids), np.arange(n))
    # pairs stay together
    np.testing.assert_array_equal(tr.targets, tr.features[:, 0] * 2)


def test_abalone_split_counts():
    tr, te = split_shuffle(_ds(np.arange(4177.0)), 0.7, 0)
    assert (tr.n, te.n) == (2923, 1254)


def test_prepare_fits_scaler_on_train(synthetic_csv):
    m = DatasetManifest(str(synthetic_csv), "y", seed=1)
    train, test, sc = prepare(m)
    raw_train, _ = split_shuffle(load_dataset(m), 0.7, 1)
    np.testing.assert_array_equal(sc.feature_min, raw_train.features.min(axis=0))
    assert train.features.min() == 0.0 and train.features.max() == 1.0
    assert train.n + test.n == 600


def test_abalone_style_file(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "abalone.data"
    with open(p, "w") as fh:
        for i in range(30):
            vals = ",".join(f"{v:.3f}" for v in rng.uniform(size=7))
            fh.write(f"{'MFI'[i % 3]},{vals},{i % 20 + 1}\n")
    m = DatasetManifest.from_dict({"preset": "abalone", "path": str(p)})
    assert m.columns == ABALONE_COLUMNS and m.target == "rings"
    data = load_dataset(m)
    assert data.d == 10 and data.feature_names[:3] == ["sex=F", "sex=I", "sex=M"]


def test_wine_style_file(tmp_path):
    rng = np.random.default_rng(1)
    names = [f"f{j}" for j in range(11)]
    p = write_csv(tmp_path / "w.csv", rng.uniform(size=(20, 11)), rng.integers(3, 9, 20),
                  names=names, target="quality", delimiter=";")
    data = load_dataset(DatasetManifest.from_dict({"preset": "wine", "path": str(p), "seed": 4}))
    assert data.d == 11 and data.n == 20
