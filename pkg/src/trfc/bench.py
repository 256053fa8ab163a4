"""Scenario runner: simulate, condition, estimate and score.

A run directory holds::

    trace.csv                 measured (noisy) trace with the true friction
    estimates_<name>.csv      per-step output of one estimator
    latency_<name>.csv        per-update latency samples of one estimator
    metrics.csv               per-estimator, per-wheel scores
    summary.txt               human-readable table
    fig_*.png                 figures (written by ``report``)

Metrics only depend on the persisted CSV files, so :func:`report_run` on a
finished directory reproduces them.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from trfc import metrics
from trfc.errors import ConfigurationError
from trfc.metrics import EstimateTrace, LatencyProfile
from trfc.nls import EstimateStep, NlsEstimator
from trfc.scenario import EstimatorSpec, ScenarioSpec
from trfc.signals import FeatureStream, ObservationWindow, add_noise, build_features
from trfc.tdnn import TdnnEstimator, TdnnModel, load_model, model_from_bytes
from trfc.vehicle import WHEEL_NAMES, SimTrace, WheelId, read_trace_csv, run_maneuver, write_trace_csv

log = logging.getLogger(__name__)

RUNS_ENV = "TRFC_RUNS_DIR"
DEFAULT_RUNS_DIR = "runs"
LATENCY_UPDATES = 10_000
METRIC_COLUMNS = ("estimator", "wheel", "n_active", "rms_active", "rms_all", "convergence_median_s",
                  "convergence_s")


def runs_root() -> Path:
    """Root directory for run output: ``$TRFC_RUNS_DIR`` or ``./runs``."""
    return Path(os.environ.get(RUNS_ENV) or DEFAULT_RUNS_DIR)


def bundled_model() -> TdnnModel:
    return model_from_bytes((resources.files("trfc") / "data" / "tdnn_default.bin").read_bytes())


def resolve_models(spec: ScenarioSpec) -> dict[str, TdnnModel]:
    """Load the network of every TDNN estimator.

    Raises:
        ConfigurationError: a model file is missing or unreadable.
    """
    out = {}
    for e in spec.estimators:
        if e.kind == "tdnn":
            out[e.name] = bundled_model() if e.model_path is None else load_model(e.model_path)
    return out


def make_estimator(e: EstimatorSpec, spec: ScenarioSpec, models: dict[str, TdnnModel]):
    if e.kind == "nls":
        return NlsEstimator(e.nls, spec.vehicle.tire.params_for(e.nls.model))
    return TdnnEstimator(models[e.name], e.alpha_threshold_rad, e.mu_initial)


# -- metrics --------------------------------------------------------------------

@dataclass
class WheelMetrics:
    estimator: str
    wheel: WheelId
    n_active: int
    rms_active: float
    rms_all: float
    convergence: list[tuple[float, float]]

    @property
    def convergence_median_s(self) -> float:
        if not self.convergence:
            return float("nan")
        return float(np.median([d for _, d in self.convergence]))


@dataclass
class MetricsReport:
    scenario: str
    rows: list[WheelMetrics]
    latency: dict[str, LatencyProfile] = field(default_factory=dict)

    def row(self, estimator: str, wheel: WheelId | str) -> WheelMetrics:
        w = WheelId.parse(wheel)
        for r in self.rows:
            if r.estimator == estimator and r.wheel == w:
                return r
        raise KeyError((estimator, w.name))

    def estimators(self) -> list[str]:
        return list(dict.fromkeys(r.estimator for r in self.rows))

    def wheels(self) -> list[WheelId]:
        return sorted({r.wheel for r in self.rows})

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in self.rows:
            conv = ";".join(f"{t0:g}:{d:.2f}" for t0, d in r.convergence)
            writer.writerow((r.estimator, WHEEL_NAMES[r.wheel], r.n_active, _num(r.rms_active), _num(r.rms_all),
                             _num(r.convergence_median_s), conv))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> str:
        """RMS table (estimators by wheel), convergence and latency."""
        wheels = self.wheels()
        lines = [f"scenario: {self.scenario}", "", "RMS error of estimated friction (active samples only)"]
        head = f"{'estimator':<14}" + "".join(f"{'mu_' + WHEEL_NAMES[w]:>10}" for w in wheels)
        lines += [head, "-" * len(head)]
        for e in self.estimators():
            lines.append(f"{e:<14}" + "".join(f"{_num(self.row(e, w).rms_active):>10}" for w in wheels))
        lines += ["", "RMS error over all samples (held values included)", head, "-" * len(head)]
        for e in self.estimators():
            lines.append(f"{e:<14}" + "".join(f"{_num(self.row(e, w).rms_all):>10}" for w in wheels))
        if any(r.convergence for r in self.rows):
            lines += ["", f"median time to stay within +/-{metrics.BAND} after friction steps [s]", head,
                      "-" * len(head)]
            for e in self.estimators():
                lines.append(f"{e:<14}" + "".join(f"{_num(self.row(e, w).convergence_median_s, 2):>10}"
                                                  for w in wheels))
        if self.latency:
            lines += ["", "per-update latency [us]", f"{'estimator':<14}{'n':>8}{'mean':>10}{'p50':>10}{'p99':>10}"]
            for e, lp in self.latency.items():
                lines.append(f"{e:<14}{len(lp.samples_us):>8}{lp.mean_us:>10.1f}{lp.p50_us:>10.1f}{lp.p99_us:>10.1f}")
        return "\n".join(lines) + "\n"


def _num(x: float, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if math.isinf(x):
        return "inf"
    return f"{x:.{digits}f}"


def compute_metrics(name: str, trace: SimTrace, estimates: dict[str, dict[WheelId, EstimateTrace]],
                    latency: dict[str, LatencyProfile] | None = None) -> MetricsReport:
    """Score every estimator on every wheel; rows are ordered by estimator name, then wheel."""
    rows = []
    for est_name, per_wheel in sorted(estimates.items()):
        for w, tr in sorted(per_wheel.items()):
            rows.append(WheelMetrics(est_name, w, int(np.count_nonzero(tr.active)), metrics.rms_error(tr, trace),
                                     metrics.rms_error_all(tr, trace), metrics.convergence_times(tr, trace)))
    return MetricsReport(name, rows, dict(sorted((latency or {}).items())))


# -- running --------------------------------------------------------------------

@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    trace: SimTrace
    estimates: dict[str, dict[WheelId, EstimateTrace]]
    report: MetricsReport
    checksums: dict[str, dict[WheelId, str]]
    streams: dict[WheelId, FeatureStream]


def drive(estimator, stream: FeatureStream, timing: bool = False) -> EstimateTrace:
    """Feed ``stream`` sample by sample through a fresh window into ``estimator``."""
    window = ObservationWindow()
    n = len(stream)
    mu, active, iters, us = np.empty(n), np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int64), np.zeros(n)
    clock = time.perf_counter_ns
    for k, s in enumerate(stream):
        window.push(s)
        if timing:
            t0 = clock()
            out: EstimateStep = estimator.update(window)
            us[k] = (clock() - t0) / 1000.0
        else:
            out = estimator.update(window)
        mu[k], active[k], iters[k] = out.mu_hat, out.active, out.iterations
    return EstimateTrace(stream.wheel, np.array(stream.t), np.array(stream.index), mu, active, iters, us)


def replay_windows(streams: dict[WheelId, FeatureStream], threshold_rad: float, limit: int = 2000) -> list:
    """Snapshots of full, above-threshold windows for latency replay."""
    out = []
    for stream in streams.values():
        window = ObservationWindow()
        for s in stream:
            window.push(s)
            if window.full and window.max_abs_alpha() >= threshold_rad:
                snap = ObservationWindow()
                for sample in window.samples():
                    snap.push(sample)
                out.append(snap)
                if len(out) >= limit:
                    return out
    return out


def run_scenario(spec: ScenarioSpec, latency_updates: int = LATENCY_UPDATES, timing: bool = False,
                 models: dict[str, TdnnModel] | None = None) -> ScenarioResult:
    """Simulate ``spec``, run every estimator on identical feature streams and score them.

    Args:
        spec: The scenario.
        latency_updates: Updates per estimator in the latency profile; 0 skips it.
        timing: Record the wall-clock duration of each step in the estimate
            traces (breaks byte-identical output between runs).
        models: Preloaded networks by estimator name, overriding the spec.

    Raises:
        ConfigurationError: a network file is missing (raised before simulating).
        SimulationFault: the vehicle simulation fails.
    """
    models = dict(models or {})
    missing = [e for e in spec.estimators if e.kind == "tdnn" and e.name not in models]
    if missing:
        models.update(resolve_models(replace(spec, estimators=tuple(missing))))
    clean = run_maneuver(spec.maneuver, spec.schedule, spec.vehicle, spec.seed)
    trace = add_noise(clean, spec.noise)
    streams = {w: build_features(trace, w) for w in spec.wheels}
    estimates: dict[str, dict[WheelId, EstimateTrace]] = {}
    checksums: dict[str, dict[WheelId, str]] = {}
    for e in spec.estimators:
        estimates[e.name], checksums[e.name] = {}, {}
        for w, stream in streams.items():
            checksums[e.name][w] = stream.checksum()
            log.info("%s/%s %s stream sha256=%s", spec.name, e.name, WHEEL_NAMES[w], checksums[e.name][w])
            estimates[e.name][w] = drive(make_estimator(e, spec, models), stream, timing)
    latency = {}
    if latency_updates > 0:
        for e in spec.estimators:
            windows = replay_windows(streams, e.alpha_threshold_rad)
            if windows:
                est = make_estimator(e, spec, models)
                latency[e.name] = metrics.latency_profile(est.update, windows, latency_updates)
    report = compute_metrics(spec.name, trace, estimates, latency)
    return ScenarioResult(spec, trace, estimates, report, checksums, streams)


def write_latency_csv(lp: LatencyProfile, path: Path) -> None:
    path.write_text("latency_us\n" + "".join(f"{x:.3f}\n" for x in lp.samples_us))


def read_latency_csv(path: Path) -> LatencyProfile:
    with path.open() as fh:
        if fh.readline().strip() != "latency_us":
            raise ConfigurationError(f"{path}: not a latency CSV")
        return LatencyProfile.from_samples([float(line) for line in fh if line.strip()])


def write_run(result: ScenarioResult, directory: str | Path) -> Path:
    """Write trace, estimates, latency samples, metrics and summary into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, d / "trace.csv")
    for name, per_wheel in result.estimates.items():
        metrics.write_estimates_csv([per_wheel[w] for w in sorted(per_wheel)], d / f"estimates_{name}.csv")
    for name, lp in result.report.latency.items():
        write_latency_csv(lp, d / f"latency_{name}.csv")
    result.report.to_csv(d / "metrics.csv")
    (d / "summary.txt").write_text(result.report.summary())
    return d


def load_run(directory: str | Path) -> tuple[SimTrace, dict[str, dict[WheelId, EstimateTrace]], dict[str, LatencyProfile]]:
    """Read a run directory back.

    Raises:
        ConfigurationError: the directory, its trace or its estimates are missing.
    """
    d = Path(directory)
    if not d.is_dir():
        raise ConfigurationError(f"run directory not found: {d}")
    if not (d / "trace.csv").is_file():
        raise ConfigurationError(f"{d}: no trace.csv (not a run directory)")
    files = sorted(d.glob("estimates_*.csv"))
    if not files:
        raise ConfigurationError(f"{d}: no estimates_<name>.csv files")
    try:
        trace = read_trace_csv(d / "trace.csv")
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"{d / 'trace.csv'}: unreadable trace ({exc})") from None
    estimates = {f.stem[len("estimates_"):]: metrics.read_estimates_csv(f, trace.sample_rate_hz) for f in files}
    for name, per_wheel in estimates.items():
        for tr in per_wheel.values():
            if len(tr) and (tr.step.max() >= len(trace) or tr.step.min() < 0):
                raise ConfigurationError(f"estimates_{name}.csv does not match trace.csv")
    latency = {f.stem[len("latency_"):]: read_latency_csv(f) for f in sorted(d.glob("latency_*.csv"))}
    return trace, estimates, latency


def report_run(directory: str | Path, figures: bool = True) -> MetricsReport:
    """Recompute metrics from a run directory and rewrite ``metrics.csv``, ``summary.txt`` and figures.

    Everything is read and validated before anything is written.
    """
    d = Path(directory)
    trace, estimates, latency = load_run(d)
    name = d.name
    report = compute_metrics(name, trace, estimates, latency)
    csv_text, summary = report.to_csv(), report.summary()
    rendered = {}
    if figures:
        from trfc import plotting

        rendered = plotting.run_figures(trace, estimates, latency)
    (d / "metrics.csv").write_text(csv_text)
    (d / "summary.txt").write_text(summary)
    for fname, data in rendered.items():
        (d / fname).write_bytes(data)
    return report


def bench_table(reports: list[MetricsReport]) -> str:
    """One table over scenarios: rows are estimators, columns the front-wheel RMS per scenario."""
    lines = ["RMS error of estimated friction (active samples only)", ""]
    for rep in reports:
        lines.append(f"[{rep.scenario}]")
        wheels = rep.wheels()
        head = f"{'methodology':<14}" + "".join(f"{'mu_' + WHEEL_NAMES[w]:>10}" for w in wheels)
        lines += [head, "-" * len(head)]
        for e in rep.estimators():
            lines.append(f"{e:<14}" + "".join(f"{_num(rep.row(e, w).rms_active):>10}" for w in wheels))
        lines.append("")
    return "\n".join(lines)
