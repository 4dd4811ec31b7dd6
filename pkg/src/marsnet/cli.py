"""Command-line entry point: ``marsnet <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import tomli

from .convert import mars_to_network, reshape_to
from .data import DataError, DatasetManifest, prepare
from .experiment import ConfigError, ExperimentConfig, emit_reports, run_comparison, run_scaling, run_timing
from .lattice import LatticePwl, compile_lattice
from .network import DenseNetwork, TrainConfig, TrainingDiverged, mse_loss, train
from .spline import FitConfig, MarsModel, feature_importance, fit_mars

log = logging.getLogger("marsnet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


# --- shared option groups -------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (split, shuffling, init)")


def _add_data(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", required=True, help="path to a delimited data file")
    g.add_argument("--preset", choices=["abalone", "wine"], help="column layout of a known dataset")
    g.add_argument("--target", help="target column name")
    g.add_argument("--categorical", action="append", default=None, help="categorical column (repeatable)")
    g.add_argument("--delimiter", default=None)
    g.add_argument("--no-header", action="store_true", help="file has no header row")
    g.add_argument("--columns", default=None, help="comma-separated column names for header-less files")
    g.add_argument("--split", type=float, default=0.7, help="train fraction of the shuffle split")


def _manifest(args) -> DatasetManifest:
    doc = {"path": args.data, "train_fraction": args.split, "seed": args.seed}
    if args.preset:
        doc["preset"] = args.preset
    elif not args.target:
        raise UsageError("--target is required unless --preset is given")
    if args.target:
        doc["target"] = args.target
    if args.categorical is not None:
        doc["categorical"] = args.categorical
    if args.delimiter is not None:
        doc["delimiter"] = args.delimiter
    if args.no_header:
        doc["header"] = False
    if args.columns:
        doc["columns"] = [c.strip() for c in args.columns.split(",")]
    return DatasetManifest.from_dict(doc)


def _add_fit(p):
    g = p.add_argument_group("spline fit")
    g.add_argument("--max-terms", type=int, default=20)
    g.add_argument("--penalty", type=float, default=3.0)
    g.add_argument("--knot-subsample", type=int, default=None)
    g.add_argument("--fit-fraction", type=float, default=1.0, help="fraction of training rows used by the fit")
    g.add_argument("--fast", action="store_true", help="use the compiled incremental search")


def _add_train(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--no-shuffle", action="store_true")


def _add_config(p):
    p.add_argument("--config", required=True, help="experiment TOML file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config entry; VALUE is a TOML literal (repeatable)")
    p.add_argument("--epochs", type=int, help="shortcut for --set train.epochs=N")
    p.add_argument("--seeds", type=_ints, help="shortcut for --set experiment.seeds=[...]")
    p.add_argument("--out", help="output directory / file")


# --- config overrides ----------------------------------------------------------

def _toml_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, sets: list[str]) -> dict:
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        doc.setdefault(section, {})[name] = _toml_value(value.strip())
    return doc


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    sets = list(args.set)
    if args.epochs is not None:
        sets.append(f"train.epochs={args.epochs}")
    if args.seeds is not None:
        sets.append(f"experiment.seeds={args.seeds}")
    elif args.seed_given:
        sets.append(f"experiment.seeds=[{args.seed}]")
    doc = apply_overrides(doc, sets)
    ds = doc.get("dataset", {})
    if ds.get("path") and not Path(ds["path"]).is_absolute():
        ds["path"] = str(path.parent / ds["path"])
    cfg = ExperimentConfig.from_dict(doc)
    if args.out:
        cfg.output_dir = args.out
    return cfg


# --- subcommands ------------------------------------------------------------------

def cmd_fit(args) -> int:
    manifest = _manifest(args)
    train_set, test_set, scaler = prepare(manifest, args.seed)
    cfg = FitConfig(args.max_terms, args.penalty, args.knot_subsample, args.fit_fraction, args.fast)
    res = fit_mars(train_set, cfg)
    _write(args.out, res.model.dumps())
    test_mse = mse_loss(res.model.predict(test_set.features), test_set.targets)
    print(f"terms={res.model.size} fit_seconds={res.seconds:.6f} test_mse={test_mse:.10g}")
    if args.importance:
        rows = feature_importance(res.model, train_set.feature_names).rows()
        _write(args.importance, json.dumps(rows, indent=2))
    if args.scaler:
        _write(args.scaler, json.dumps(scaler.to_dict(), indent=2))
    return EXIT_OK


def cmd_convert(args) -> int:
    model = MarsModel.from_dict(_read_json(args.model))
    net, report = mars_to_network(model, probes=args.probes, seed=args.seed)
    _write(args.out, net.dumps())
    if args.report:
        _write(args.report, report.dumps())
    print(f"hidden_width={report.hidden_width} max_deviation={report.max_deviation:.3g}")
    return EXIT_OK


def cmd_reshape(args) -> int:
    net = DenseNetwork.from_dict(_read_json(args.net))
    out = reshape_to(net, args.widths)
    _write(args.out, out.dumps())
    print("widths=" + ",".join(map(str, out.widths)))
    return EXIT_OK


def cmd_train(args) -> int:
    net = DenseNetwork.from_dict(_read_json(args.net))
    train_set, test_set, _ = prepare(_manifest(args), args.seed)
    cfg = TrainConfig(args.lr, args.batch_size, args.epochs, args.seed, not args.no_shuffle)
    final, hist = train(net, train_set.features, train_set.targets, cfg)
    _write(args.out, final.dumps())
    if args.history:
        Path(args.history).parent.mkdir(parents=True, exist_ok=True)
        hist.to_csv(args.history)
    before = mse_loss(net.predict(test_set.features), test_set.targets)
    after = mse_loss(final.predict(test_set.features), test_set.targets)
    print(f"test_mse_before={before:.10g} test_mse_after={after:.10g} seconds={hist.total_seconds:.4f}")
    return EXIT_OK


def cmd_compile(args) -> int:
    lat = LatticePwl.from_dict(_read_json(args.lattice))
    net, depth = compile_lattice(lat)
    _write(args.out, net.dumps())
    print(json.dumps(depth.to_dict()))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    report = run_comparison(cfg)
    emit_reports(report, cfg.output_dir)
    for arm, stages in report.summary().items():
        print(arm, " ".join(f"{k}={v['mean']:.6g}[{v['min']:.6g},{v['max']:.6g}]" for k, v in stages.items()))
    failed = [(s.seed, a.arm) for s in report.seeds for a in s.arms.values() if a.error]
    for seed, arm in failed:
        print(f"seed {seed}: {arm} arm diverged", file=sys.stderr)
    return EXIT_OK


def cmd_timing(args) -> int:
    cfg = _load_config(args)
    table = run_timing(cfg)
    out = Path(args.out or cfg.output_dir) / "timing.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    for r in table.rows:
        print(f"seed={r.seed} fit={r.fit_seconds:.5f}s epoch={r.converted_per_epoch:.5f}s "
              f"ratio={r.ratio:.3f} arm_gap={r.arm_gap:.3f}")
    return EXIT_OK


def cmd_scaling(args) -> int:
    cfg = _load_config(args)
    table = run_scaling(args.sizes, cfg)
    out = Path(args.out or cfg.output_dir) / "scaling.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    for n, s in zip(table.sizes, table.seconds):
        print(f"n={n} seconds={s:.6f}")
    print(f"slope={table.slope:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marsnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a first-order spline model (CSV -> model JSON)")
    _add_data(p)
    _add_fit(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.add_argument("--importance", help="write the feature-importance report here")
    p.add_argument("--scaler", help="write the fitted min-max scaler here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("convert", help="model JSON -> equivalent network JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the conversion report here")
    p.add_argument("--probes", type=int, default=1000)
    _add_seed(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("reshape", help="widen/deepen a network without changing its function")
    p.add_argument("--net", required=True)
    p.add_argument("--widths", required=True, type=_ints, help="e.g. 11,32,32,1")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_reshape)

    p = sub.add_parser("train", help="continue training a network with mini-batch SGD")
    p.add_argument("--net", required=True)
    _add_data(p)
    _add_train(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile-pwl", help="lattice JSON -> network JSON")
    p.add_argument("--lattice", required=True)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_compile)

    for name, func, extra in (("compare", cmd_compare, None), ("timing", cmd_timing, None),
                              ("scaling", cmd_scaling, "sizes")):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config file")
        _add_config(p)
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
        if extra:
            p.add_argument("--sizes", type=_ints, default=[500, 1000, 2000, 4000])
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", 0) is None:
        args.seed_given = False
        args.seed = 0
    else:
        args.seed_given = True
    try:
        return args.func(args)
    except (TrainingDiverged, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ConfigError, DataError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
