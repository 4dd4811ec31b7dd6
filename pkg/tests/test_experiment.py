import csv
import json
import math

import numpy as np
import pytest

from marsnet.convert import ShiftReport
from marsnet.data import DataError, DatasetManifest, prepare, synthetic_additive
from marsnet.experiment import (
    CONVERTED,
    RANDOM,
    ConfigError,
    ExperimentConfig,
    aggregate,
    emit_reports,
    loglog_slope,
    run_comparison,
    run_scaling,
    run_timing,
    time_fit,
)
from marsnet.network import DenseNetwork, TrainConfig, train
from marsnet.spline import FitConfig, MarsModel


def _config(path, epochs=3, seeds=(0, 1), hidden=None, **fit):
    fit = {"max_terms": 10, "fast": True, **fit}
    return ExperimentConfig(
        dataset=DatasetManifest(str(path), "y"),
        fit=FitConfig(**fit),
        hidden=hidden,
        train=TrainConfig(lr=0.05, batch_size=32, epochs=epochs),
        seeds=list(seeds),
    )


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_comparison_is_deterministic(synthetic_csv):
    cfg = _config(synthetic_csv)
    a, b = run_comparison(cfg), run_comparison(cfg)
    for sa, sb in zip(a.seeds, b.seeds):
        for arm in (CONVERTED, RANDOM):
            assert sa.arms[arm].history.losses == sb.arms[arm].history.losses
            assert sa.arms[arm].test_mse == sb.arms[arm].test_mse


def test_arms_share_shape_and_batches(synthetic_csv):
    cfg = _config(synthetic_csv, seeds=(3,))
    s = run_comparison(cfg).seeds[0]
    conv, rand = s.arms[CONVERTED], s.arms[RANDOM]
    assert conv.initial.widths == rand.initial.widths
    # replaying the random arm with the converted arm's batch seed reproduces it exactly
    train_set, _, _ = prepare(cfg.dataset, 3)
    _, hist = train(rand.initial, train_set.features, train_set.targets, TrainConfig(lr=0.05, epochs=3, seed=3))
    assert hist.losses == rand.history.losses


def test_converted_arm_starts_at_mars_error(synthetic_csv):
    cfg = _config(synthetic_csv, hidden=[16, 16])
    for s in run_comparison(cfg).seeds:
        assert s.arms[CONVERTED].initial.widths == [4, 16, 16, 1]
        assert abs(s.arms[CONVERTED].before - s.mars_test_mse) <= 1e-9
        assert s.arms[CONVERTED].before < s.arms[RANDOM].before


def test_zero_epochs(synthetic_csv, tmp_path):
    report = run_comparison(_config(synthetic_csv, epochs=0, seeds=(0,)))
    s = report.seeds[0]
    assert s.arms[CONVERTED].test_mse == [s.arms[CONVERTED].before]
    assert s.shift is not None and all(r.w_delta_frobenius == 0 for r in s.shift.layers)
    emit_reports(report, tmp_path)
    assert _read(tmp_path / "loss_curves_seed0.csv") == [["epoch", "converted_loss", "random_loss"]]
    assert _read(tmp_path / "errors.csv")[0] == ["seed", "arm", "before_training", "error"]


def test_emitted_files(synthetic_csv, tmp_path):
    cfg = _config(synthetic_csv, epochs=50, seeds=(0,))
    cfg.report_epochs = [10]
    report = run_comparison(cfg)
    written = emit_reports(report, tmp_path / "a")
    rows = _read(tmp_path / "a" / "loss_curves_seed0.csv")
    assert len(rows) == 51
    s = report.seeds[0]
    assert [float(r[1]) for r in rows[1:]] == s.arms[CONVERTED].history.losses
    assert [float(r[2]) for r in rows[1:]] == s.arms[RANDOM].history.losses
    errors = _read(tmp_path / "a" / "errors.csv")
    assert errors[0] == ["seed", "arm", "before_training", "after_10_epochs", "after_50_epochs", "error"]
    assert float(errors[1][3]) == s.arms[CONVERTED].test_mse[10]
    # deserializers round-trip exactly
    assert MarsModel.loads((tmp_path / "a" / "mars_seed0.json").read_text()).to_dict() == s.model.to_dict()
    net = DenseNetwork.loads((tmp_path / "a" / "converted_final_seed0.json").read_text())
    np.testing.assert_array_equal(net.layers[0].weights, s.arms[CONVERTED].final.layers[0].weights)
    shift = ShiftReport.read_csv(tmp_path / "a" / "shift_seed0.csv")
    assert shift[0]["relative_shift"] == s.shift.layers[0].relative_shift
    # identical files on re-emission
    emit_reports(report, tmp_path / "b")
    for p in written:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    doc = json.loads((tmp_path / "a" / "report.json").read_text())
    assert doc["seeds"][0]["arms"]["converted"]["before"] == s.arms[CONVERTED].before


def test_aggregate_bounds():
    agg = aggregate([0.3, 0.1, 0.2, math.nan])
    assert agg.min <= agg.mean <= agg.max and agg.count == 3
    assert aggregate([]).count == 0


def test_summary_mean_between_extremes(synthetic_csv):
    summary = run_comparison(_config(synthetic_csv, seeds=(0, 1, 2))).summary()
    for arm in (CONVERTED, RANDOM):
        for stage in ("before", "after"):
            s = summary[arm][stage]
            assert s["min"] <= s["mean"] <= s["max"] and s["count"] == 3


def test_divergence_is_reported_per_seed(synthetic_csv, tmp_path):
    cfg = _config(synthetic_csv, epochs=5, seeds=(0, 1))
    cfg.train = TrainConfig(lr=1e8, epochs=5)
    report = run_comparison(cfg)
    assert len(report.seeds) == 2
    assert all(s.arms[RANDOM].error for s in report.seeds)
    emit_reports(report, tmp_path)
    assert "nan" in _read(tmp_path / "errors.csv")[2]


def test_config_load(tmp_path, synthetic_csv):
    p = tmp_path / "exp.toml"
    p.write_text(
        f'[dataset]\npath = "{synthetic_csv.name}"\ntarget = "y"\n'
        "[fit]\nmax_terms = 8\n[train]\nepochs = 2\n[network]\nhidden = [12]\n"
        "[experiment]\nseeds = [7]\n"
    )
    cfg = ExperimentConfig.load(p)
    assert cfg.dataset.path == str(tmp_path / synthetic_csv.name)
    assert cfg.fit.max_terms == 8 and cfg.hidden == [12] and cfg.seeds == [7]
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    for bad in ({"bogus": {}}, {"dataset": {"path": "x", "target": "y"}, "fit": {"nope": 1}}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        _config(synthetic_csv, seeds=())


def test_timing_table(synthetic_csv, tmp_path):
    cfg = _config(synthetic_csv, epochs=3, seeds=(0,))
    cfg.timing_repeats = 1
    table = run_timing(cfg)
    row = table.rows[0]
    assert row.fit_seconds > 0 and row.converted_per_epoch > 0 and row.random_per_epoch > 0
    assert row.ratio == row.fit_seconds / row.converted_per_epoch
    table.to_csv(tmp_path / "t.csv")
    assert _read(tmp_path / "t.csv")[0][-1] == "ratio"


def test_scaling_guards(synthetic_csv):
    cfg = _config(synthetic_csv)
    with pytest.raises(ValueError, match="need >= 3 points"):
        run_scaling([100], cfg)
    with pytest.raises(ValueError):
        run_scaling([100, 50, 200], cfg)
    with pytest.raises(DataError):
        run_scaling([100, 200, 10_000], cfg)


def test_scaling_table(synthetic_csv, tmp_path):
    cfg = _config(synthetic_csv)
    cfg.timing_repeats = 1
    table = run_scaling([100, 200, 400], cfg)
    assert len(table.seconds) == 3 and all(s > 0 for s in table.seconds)
    assert table.slope == pytest.approx(loglog_slope(table.sizes, table.seconds))
    table.to_csv(tmp_path / "s.csv")
    assert _read(tmp_path / "s.csv")[0] == ["n", "seconds"]


def test_loglog_slope_examples():
    n = np.array([100, 200, 400, 800])
    assert loglog_slope(n, 3e-4 * n) == pytest.approx(1.0)
    assert loglog_slope(n, 1e-6 * n ** 2) == pytest.approx(2.0)


def test_max_terms_doubling_is_superlinear():
    ds = synthetic_additive(1000, 6, noise=0.05, seed=0)
    small = time_fit(ds, FitConfig(max_terms=10, knot_subsample=20), repeats=2)
    large = time_fit(ds, FitConfig(max_terms=20, knot_subsample=20), repeats=2)
    assert large / small > 2
