"""End-to-end experiments: MARS fit -> conversion -> training vs. random initialization.

Also wall-clock timing of the fit against training epochs, runtime scaling in N,
and report emission (CSV/JSON files).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli
from threadpoolctl import threadpool_limits

from .convert import ShiftReport, mars_to_network, parameter_shift_report, reshape_to
from .data import DataError, Dataset, DatasetManifest, load_dataset, normalize, prepare
from .network import DenseNetwork, TrainConfig, TrainHistory, TrainingDiverged, mse_loss, random_init, train
from .spline import FitConfig, MarsModel, feature_importance, fit_mars

log = logging.getLogger(__name__)

CONVERTED, RANDOM = "converted", "random"
ARMS = (CONVERTED, RANDOM)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: DatasetManifest
    fit: FitConfig = field(default_factory=FitConfig)
    # hidden widths of the trained networks; None keeps the converted shape d -> M -> 1
    hidden: list[int] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "results"
    # epochs at which the error table reports test MSE (the final epoch is always included)
    report_epochs: list[int] = field(default_factory=list)
    timing_repeats: int = 3

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.hidden is not None and any(w < 1 for w in self.hidden):
            raise ConfigError("hidden widths must be >= 1")
        if self.timing_repeats < 1:
            raise ConfigError("timing_repeats must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"dataset", "fit", "train", "network", "experiment"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            dataset = DatasetManifest.from_dict(dict(doc.get("dataset", {})))
            fit = FitConfig(**doc.get("fit", {}))
            train_cfg = TrainConfig(**doc.get("train", {}))
            net = doc.get("network", {})
            exp = doc.get("experiment", {})
            return cls(
                dataset=dataset,
                fit=fit,
                hidden=net.get("hidden"),
                train=train_cfg,
                seeds=list(exp.get("seeds", [0, 1, 2, 3, 4])),
                output_dir=exp.get("output_dir", "results"),
                report_epochs=list(exp.get("report_epochs", [])),
                timing_repeats=int(exp.get("timing_repeats", 3)),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with path.open("rb") as fh:
            try:
                doc = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        cfg = cls.from_dict(doc)
        # relative dataset paths are resolved against the config file's directory
        if cfg.dataset.path and not os.path.isabs(cfg.dataset.path):
            cfg.dataset = replace(cfg.dataset, path=str(path.parent / cfg.dataset.path))
        return cfg

    def to_dict(self) -> dict:
        return {
            "dataset": asdict(self.dataset),
            "fit": asdict(self.fit),
            "network": {"hidden": self.hidden},
            "train": asdict(self.train),
            "experiment": {
                "seeds": self.seeds,
                "output_dir": self.output_dir,
                "report_epochs": self.report_epochs,
                "timing_repeats": self.timing_repeats,
            },
        }


@dataclass
class ArmResult:
    arm: str
    initial: DenseNetwork
    final: DenseNetwork | None
    history: TrainHistory
    # test MSE after 0, 1, ..., epochs (index = epoch); shorter when training diverged
    test_mse: list[float]
    error: str | None = None

    @property
    def before(self) -> float:
        return self.test_mse[0]

    @property
    def after(self) -> float:
        return self.test_mse[-1]


@dataclass
class SeedResult:
    seed: int
    model: MarsModel
    fit_seconds: float
    mars_test_mse: float
    feature_names: list[str]
    arms: dict[str, ArmResult]
    shift: ShiftReport | None


@dataclass
class Aggregate:
    mean: float
    min: float
    max: float
    count: int


def aggregate(values: Sequence[float]) -> Aggregate:
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return Aggregate(math.nan, math.nan, math.nan, 0)
    return Aggregate(float(np.mean(vals)), float(min(vals)), float(max(vals)), len(vals))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    seeds: list[SeedResult]

    def errors_at(self, arm: str, epoch: int | None = None) -> list[float]:
        out = []
        for s in self.seeds:
            mse = s.arms[arm].test_mse
            if s.arms[arm].error is not None:
                out.append(math.nan)
            else:
                out.append(mse[-1] if epoch is None else mse[epoch])
        return out

    def summary(self) -> dict:
        epochs = self.config.train.epochs
        stages = {"before": 0, "after": epochs}
        out = {}
        for arm in ARMS:
            out[arm] = {name: asdict(aggregate(self.errors_at(arm, e))) for name, e in stages.items()}
        return out


def _arm(arm, net, train_set, test_set, cfg: TrainConfig) -> ArmResult:
    test_mse = [mse_loss(net.predict(test_set.features), test_set.targets)]

    def track(epoch, current):
        test_mse.append(mse_loss(current.predict(test_set.features), test_set.targets))

    try:
        final, hist = train(net, train_set.features, train_set.targets, cfg, on_epoch=track)
        return ArmResult(arm, net, final, hist, test_mse)
    except TrainingDiverged as exc:
        log.warning("%s arm diverged: %s", arm, exc)
        return ArmResult(arm, net, None, TrainHistory(), test_mse, str(exc))


def run_seed(config: ExperimentConfig, seed: int, data: tuple[Dataset, Dataset] | None = None) -> SeedResult:
    if data is None:
        train_set, test_set, _ = prepare(config.dataset, seed)
    else:
        train_set, test_set = data
    fit = fit_mars(train_set, config.fit)
    converted, _ = mars_to_network(fit.model, probes=0)
    if config.hidden is not None:
        converted = reshape_to(converted, [train_set.d] + list(config.hidden) + [1])
    rand = random_init(converted.widths, seed)
    tcfg = replace(config.train, seed=seed)
    arms = {
        CONVERTED: _arm(CONVERTED, converted, train_set, test_set, tcfg),
        RANDOM: _arm(RANDOM, rand, train_set, test_set, tcfg),
    }
    conv = arms[CONVERTED]
    shift = parameter_shift_report(conv.initial, conv.final) if conv.final is not None else None
    mars_mse = mse_loss(fit.model.predict(test_set.features), test_set.targets)
    return SeedResult(seed, fit.model, fit.seconds, mars_mse, list(train_set.feature_names), arms, shift)


def run_comparison(config: ExperimentConfig) -> ExperimentReport:
    """Converted vs. random initialization of the same shape, trained on identical batches."""
    return ExperimentReport(config, [run_seed(config, s) for s in config.seeds])


# --- timing -----------------------------------------------------------------

@dataclass
class TimingRow:
    seed: int
    fit_seconds: float
    converted_total: float
    converted_per_epoch: float
    random_total: float
    random_per_epoch: float

    @property
    def ratio(self) -> float:
        """MARS fit time in units of one converted-network training epoch."""
        return self.fit_seconds / self.converted_per_epoch

    @property
    def arm_gap(self) -> float:
        """Relative difference of per-epoch times between the two arms."""
        return abs(self.converted_per_epoch - self.random_per_epoch) / min(self.converted_per_epoch,
                                                                           self.random_per_epoch)


@dataclass
class TimingTable:
    rows: list[TimingRow]
    epochs: int

    FIELDS = ("seed", "fit_seconds", "converted_total", "converted_per_epoch",
              "random_total", "random_per_epoch", "ratio")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for r in self.rows:
                w.writerow([r.seed] + [repr(float(getattr(r, f))) for f in self.FIELDS[1:]])


def time_fit(train_set: Dataset, config: FitConfig, repeats: int = 3) -> float:
    """Fastest of ``repeats`` single-threaded fits, after one discarded warm-up fit."""
    with threadpool_limits(1):
        fit_mars(train_set, config)
        best = math.inf
        for _ in range(repeats):
            start = time.perf_counter()
            fit_mars(train_set, config)
            best = min(best, time.perf_counter() - start)
    return best


def run_timing(config: ExperimentConfig) -> TimingTable:
    """Fit seconds vs. total and per-epoch training seconds for both arms.

    Each run is preceded by a discarded warm-up; per-epoch time is the median epoch.
    """
    rows = []
    with threadpool_limits(1):
        for seed in config.seeds:
            train_set, test_set, _ = prepare(config.dataset, seed)
            fit_s = time_fit(train_set, config.fit, config.timing_repeats)
            model = fit_mars(train_set, config.fit).model
            conv, _ = mars_to_network(model, probes=0)
            if config.hidden is not None:
                conv = reshape_to(conv, [train_set.d] + list(config.hidden) + [1])
            rand = random_init(conv.widths, seed)
            tcfg = replace(config.train, seed=seed)
            train(conv, train_set.features, train_set.targets, replace(tcfg, epochs=1))
            per = {}
            for arm, net in ((CONVERTED, conv), (RANDOM, rand)):
                try:
                    _, hist = train(net, train_set.features, train_set.targets, tcfg)
                    per[arm] = (hist.total_seconds, float(np.median(hist.epoch_seconds)) if hist.epochs else math.nan)
                except TrainingDiverged as exc:
                    log.warning("%s arm diverged during timing: %s", arm, exc)
                    per[arm] = (math.nan, math.nan)
            rows.append(TimingRow(seed, fit_s, per[CONVERTED][0], per[CONVERTED][1],
                                  per[RANDOM][0], per[RANDOM][1]))
    return TimingTable(rows, config.train.epochs)


# --- scaling ------------------------------------------------------------------

@dataclass
class ScalingTable:
    sizes: list[int]
    seconds: list[float]
    slope: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "seconds"])
            for n, s in zip(self.sizes, self.seconds):
                w.writerow([n, repr(s)])


def loglog_slope(sizes: Sequence[float], seconds: Sequence[float]) -> float:
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def run_scaling(sizes: Sequence[int], config: ExperimentConfig, data: Dataset | None = None,
                seed: int | None = None, repeats: int | None = None) -> ScalingTable:
    """Fit time on shuffled subsamples of increasing size; slope of log time vs. log N.

    Each size is timed as the fastest of ``repeats`` fits (default: the config's
    ``timing_repeats``); millisecond fits need several repeats to damp jitter.
    """
    sizes = [int(n) for n in sizes]
    if len(sizes) < 3:
        raise ValueError("need >= 3 points")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if data is None:
        data = load_dataset(config.dataset)
    if sizes[-1] > data.n:
        raise DataError(f"subsample of {sizes[-1]} rows requested from a dataset of {data.n}")
    seed = config.seeds[0] if seed is None else seed
    perm = np.random.default_rng(seed).permutation(data.n)
    fit_cfg = replace(config.fit, train_fraction=1.0)
    secs = []
    for n in sizes:
        sub, _ = normalize(data.subset(perm[:n]))
        secs.append(time_fit(sub, fit_cfg, repeats or config.timing_repeats))
    return ScalingTable(sizes, secs, loglog_slope(sizes, secs))


# --- report emission ----------------------------------------------------------

def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _f(v: float) -> str:
    return repr(float(v))


def emit_reports(report: ExperimentReport, out_dir) -> list[Path]:
    """Write CSV/JSON artifacts for every seed plus summary tables. Output is deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    epochs = report.config.train.epochs
    checkpoints = sorted({e for e in report.config.report_epochs if 0 < e <= epochs} | ({epochs} if epochs else set()))

    def put(name, header, rows):
        p = out / name
        _write_rows(p, header, rows)
        written.append(p)

    def put_text(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    error_rows = []
    for s in report.seeds:
        conv, rand = s.arms[CONVERTED], s.arms[RANDOM]
        n_rows = min(conv.history.epochs, rand.history.epochs)
        put(f"loss_curves_seed{s.seed}.csv", ["epoch", "converted_loss", "random_loss"],
            [[e + 1, _f(conv.history.losses[e]), _f(rand.history.losses[e])] for e in range(n_rows)])
        put(f"test_curves_seed{s.seed}.csv", ["epoch", "converted_test_mse", "random_test_mse"],
            [[e, _f(conv.test_mse[e]), _f(rand.test_mse[e])]
             for e in range(min(len(conv.test_mse), len(rand.test_mse)))])
        for arm in (conv, rand):
            row = [s.seed, arm.arm, _f(arm.before)]
            row += [_f(arm.test_mse[e]) if e < len(arm.test_mse) and arm.error is None else "nan"
                    for e in checkpoints]
            row.append(arm.error or "")
            error_rows.append(row)
        put_text(f"mars_seed{s.seed}.json", s.model.dumps())
        for arm in (conv, rand):
            put_text(f"{arm.arm}_initial_seed{s.seed}.json", arm.initial.dumps())
            if arm.final is not None:
                put_text(f"{arm.arm}_final_seed{s.seed}.json", arm.final.dumps())
        if s.shift is not None:
            p = out / f"shift_seed{s.seed}.csv"
            s.shift.to_csv(p)
            written.append(p)
            put_text(f"shift_seed{s.seed}.json", s.shift.dumps())
        imp = feature_importance(s.model, s.feature_names)
        put(f"importance_seed{s.seed}.csv", ["rank", "dim", "name", "importance", "knots"],
            [[r["rank"], r["dim"], r["name"], _f(r["importance"]), " ".join(repr(k) for k in r["knots"])]
             for r in sorted(imp.rows(), key=lambda r: r["rank"])])

    put("errors.csv", ["seed", "arm", "before_training"] + [f"after_{e}_epochs" for e in checkpoints] + ["error"],
        error_rows)

    summary_rows = []
    for arm in ARMS:
        for label, e in [("before_training", 0)] + [(f"after_{c}_epochs", c) for c in checkpoints]:
            agg = aggregate(report.errors_at(arm, e))
            summary_rows.append([arm, label, _f(agg.mean), _f(agg.min), _f(agg.max), agg.count])
    put("errors_summary.csv", ["arm", "stage", "mean", "min", "max", "seeds"], summary_rows)

    put("timing.csv", ["seed", "arm", "fit_seconds", "total_seconds", "per_epoch_seconds"],
        [[s.seed, arm.arm, _f(s.fit_seconds if arm.arm == CONVERTED else 0.0),
          _f(arm.history.total_seconds),
          _f(float(np.median(arm.history.epoch_seconds)) if arm.history.epochs else math.nan)]
         for s in report.seeds for arm in (s.arms[CONVERTED], s.arms[RANDOM])])

    put_text("report.json", json.dumps({
        "config": report.config.to_dict(),
        "summary": report.summary(),
        "seeds": [
            {"seed": s.seed, "fit_seconds": s.fit_seconds, "mars_test_mse": s.mars_test_mse,
             "mars_terms": s.model.size,
             "arms": {a.arm: {"before": a.before, "after": a.after, "error": a.error} for a in s.arms.values()}}
            for s in report.seeds
        ],
    }, indent=2, sort_keys=True))
    return written
