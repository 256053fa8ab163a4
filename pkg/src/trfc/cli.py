"""Command-line interface: ``trfc <command> ...``.

Commands:
    simulate <scenario>              simulate and write trace.csv
    gen-dataset <config>             generate and save a training dataset
    train <dataset> <out model>      train a network on a saved dataset
    estimate <scenario> --model P    run a scenario with network P and score it
    bench <scenario set>             run every scenario of a set
    report <run dir>                 recompute metrics and figures of a run

Scenario arguments accept a YAML file or a built-in name (ramp, case1,
case2; set: bench). Output goes to ``--out`` or below ``$TRFC_RUNS_DIR``
(default ``./runs``). Exit status is 0 on success, 2 on usage or
configuration errors and 1 on runtime faults.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import yaml

from trfc import bench, plotting
from trfc.dataset import DatasetConfig, generate_dataset, load_dataset, save_dataset
from trfc.errors import ConfigurationError, TrfcError
from trfc.scenario import EstimatorSpec, load_scenario, load_scenario_set, parse_noise, parse_tire, parse_vehicle
from trfc.tdnn import Optimizer, TrainConfig, save_model, train
from trfc.signals import add_noise
from trfc.vehicle import run_maneuver, write_trace_csv

log = logging.getLogger("trfc")


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else bench.runs_root() / name


def _write_figures(directory: Path, result: bench.ScenarioResult) -> None:
    figs = plotting.run_figures(result.trace, result.estimates, result.report.latency)
    for fname, data in figs.items():
        (directory / fname).write_bytes(data)


def cmd_simulate(args) -> int:
    spec = load_scenario(args.scenario)
    trace = add_noise(run_maneuver(spec.maneuver, spec.schedule, spec.vehicle, spec.seed), spec.noise)
    out = _out_dir(args, spec.name)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "trace.csv")
    print(out / "trace.csv")
    return 0


def _dataset_config(path: str) -> tuple[dict, DatasetConfig]:
    if path == "default":
        d = {}
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"dataset config not found: {path}")
        try:
            d = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: malformed YAML: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigurationError(f"{path}: dataset config must be a mapping")
    unknown = set(d) - {"seed", "dataset", "noise", "tire", "vehicle"}
    if unknown:
        raise ConfigurationError(f"unknown key(s) in dataset config: {', '.join(sorted(unknown))}")
    try:
        cfg = DatasetConfig(**(d.get("dataset") or {}))
    except TypeError as exc:
        raise ConfigurationError(f"invalid dataset section: {exc}") from None
    return d, cfg


def cmd_gen_dataset(args) -> int:
    d, cfg = _dataset_config(args.config)
    seed = int(d.get("seed", 0)) if args.seed is None else args.seed
    tire = parse_tire(d.get("tire") or {})
    params = parse_vehicle(d.get("vehicle") or {}, tire)
    noise = parse_noise(d.get("noise") or {}, seed)
    out = _out_dir(args, "dataset")
    t0 = time.perf_counter()
    ds = generate_dataset(params, noise, seed, cfg)
    save_dataset(ds, out, {"seed": seed, "generation_time_s": round(time.perf_counter() - t0, 3)})
    counts = ds.split_counts()
    print(f"{len(ds)} windows ({', '.join(f'{k} {v}' for k, v in counts.items())}) from {len(ds.runs)} runs "
          f"-> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig(max_epochs=args.max_epochs, optimizer=Optimizer.parse(args.optimizer), patience=args.patience,
                      seed=args.seed, hidden=args.hidden, learning_rate=args.learning_rate,
                      batch_size=args.batch_size)
    ds = load_dataset(args.dataset)
    progress = None
    if args.verbose:
        progress = lambda epoch, mse: print(f"epoch {epoch}: validation mse {mse:.6g}", file=sys.stderr)  # noqa: E731
    model, report = train(ds.x, ds.y, ds.split, cfg, progress)
    out = Path(args.out_model)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    stem = out.with_suffix("")
    with open(f"{stem}_training.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("split", "n", "mse", "r", "within_0.05"))
        for name, n, mse, r, within in report.summary_rows():
            writer.writerow((name, n, f"{mse:.6g}", f"{r:.6f}", f"{within:.4f}"))
    with open(f"{stem}_error_hist.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("bin_lo", "bin_hi", "count"))
        e, c = report.histogram_edges, report.histogram_counts
        writer.writerows((f"{lo:.4f}", f"{hi:.4f}", int(n)) for lo, hi, n in zip(e[:-1], e[1:], c))
    Path(f"{stem}_error_hist.png").write_bytes(plotting.error_histogram_figure(e, c))
    if report.val_history:
        Path(f"{stem}_validation.png").write_bytes(plotting.training_curve_figure(report.val_history))
    print(f"{'split':<12}{'n':>8}{'mse':>12}{'R':>10}{'|err|<=0.05':>13}")
    for name, n, mse, r, within in report.summary_rows():
        print(f"{name:<12}{n:>8}{mse:>12.3e}{r:>10.5f}{within:>13.3f}")
    status = "diverged, kept last finite weights" if report.diverged else f"best epoch {report.best_epoch}"
    print(f"{report.optimizer}: {report.epochs} epochs, {status}, {report.train_time_s:.1f} s -> {out}")
    return 0


def _run_and_write(spec, out: Path, args) -> bench.ScenarioResult:
    result = bench.run_scenario(spec, latency_updates=args.latency, timing=args.timing)
    bench.write_run(result, out)
    if not args.no_figures:
        _write_figures(out, result)
    return result


def _with_model(spec, model: str | None):
    if model is None:
        return spec
    if not any(e.kind == "tdnn" for e in spec.estimators):
        spec = replace(spec, estimators=spec.estimators + (EstimatorSpec("tdnn", "tdnn"),))
    return spec.with_model(model)


def cmd_estimate(args) -> int:
    spec = _with_model(load_scenario(args.scenario), args.model)
    out = _out_dir(args, spec.name)
    result = _run_and_write(spec, out, args)
    print(result.report.summary(), end="")
    print(f"-> {out}")
    return 0


def cmd_bench(args) -> int:
    set_name, specs = load_scenario_set(args.scenario_set)
    specs = [_with_model(s, args.model) for s in specs]
    for s in specs:  # fail on a missing network before any simulation
        bench.resolve_models(s)
    root = _out_dir(args, set_name)
    reports = []
    for spec in specs:
        reports.append(_run_and_write(spec, root / spec.name, args).report)
    table = bench.bench_table(reports)
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.txt").write_text(table)
    print(table, end="")
    print(f"-> {root}")
    return 0


def cmd_report(args) -> int:
    report = bench.report_run(args.run_dir, figures=not args.no_figures)
    print(report.summary(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trfc", description="Tire-road friction estimation workbench.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="simulate a scenario and write trace.csv")
    p.add_argument("scenario", help="scenario YAML file or built-in name")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-dataset", help="generate a training dataset")
    p.add_argument("config", help="dataset YAML config, or 'default'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a network on a saved dataset")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out_model", help="output model file")
    p.add_argument("--optimizer", default="adam", choices=[o.value for o in Optimizer])
    p.add_argument("--max-epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_train)

    for name, helptext in (("estimate", "run one scenario and score the estimators"),
                           ("bench", "run every scenario of a set")):
        p = sub.add_parser(name, help=helptext)
        if name == "estimate":
            p.add_argument("scenario", help="scenario YAML file or built-in name")
            p.add_argument("--model", required=True, help="TDNN model file")
        else:
            p.add_argument("scenario_set", help="scenario set YAML file or 'bench'")
            p.add_argument("--model", help="TDNN model file (default: per scenario)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--latency", type=int, default=bench.LATENCY_UPDATES, metavar="N",
                       help="updates per estimator in the latency profile (0 disables)")
        p.add_argument("--timing", action="store_true", help="record per-step solve times in the estimate CSVs")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
        p.set_defaults(func=cmd_estimate if name == "estimate" else cmd_bench)

    p = sub.add_parser("report", help="recompute metrics and figures of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"trfc: error: {exc}", file=sys.stderr)
        return 2
    except (TrfcError, OSError, ValueError) as exc:
        print(f"trfc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
