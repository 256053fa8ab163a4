"""Accuracy, convergence and latency metrics for estimate traces."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from trfc.errors import ConfigurationError
from trfc.vehicle import WHEEL_NAMES, SimTrace, WheelId

BAND = 0.05
ESTIMATE_COLUMNS = ("t", "wheel", "mu_hat", "active", "iters", "solve_time_us")


@dataclass
class EstimateTrace:
    """Per-step output of one estimator on one wheel.

    ``step`` holds the index of each row's sample in the source trace.
    """

    wheel: WheelId
    t: np.ndarray
    step: np.ndarray
    mu_hat: np.ndarray
    active: np.ndarray
    iterations: np.ndarray
    solve_time_us: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in ("step", "mu_hat", "active", "iterations", "solve_time_us"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"estimate column {name} has the wrong length")

    def __len__(self) -> int:
        return len(self.t)


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_estimates_csv(traces: Iterable[EstimateTrace], path: str | Path | None = None) -> str:
    """Long-format CSV: one row per (time, wheel)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ESTIMATE_COLUMNS)
    for tr in traces:
        name = WHEEL_NAMES[tr.wheel]
        for row in zip(tr.t, tr.mu_hat, tr.active, tr.iterations, tr.solve_time_us):
            writer.writerow([_fmt(row[0]), name, _fmt(row[1]), int(row[2]), int(row[3]), _fmt(row[4])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_estimates_csv(path: str | Path, sample_rate_hz: float = 100.0) -> dict[WheelId, EstimateTrace]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"estimate file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != ESTIMATE_COLUMNS:
            raise ConfigurationError(f"{path}: not an estimates CSV (unexpected header)")
        rows: dict[str, list] = {}
        for r in reader:
            if r:
                rows.setdefault(r[1], []).append(r)
    out = {}
    for name, rs in rows.items():
        w = WheelId.parse(name)
        t = np.array([float(r[0]) for r in rs])
        out[w] = EstimateTrace(
            w, t, np.rint(t * sample_rate_hz).astype(np.int64), np.array([float(r[2]) for r in rs]),
            np.array([r[3] == "1" for r in rs]), np.array([int(r[4]) for r in rs]),
            np.array([float(r[5]) for r in rs]))
    return out


def truth_for(est: EstimateTrace, truth: SimTrace) -> np.ndarray:
    return truth.mu_true[est.step, est.wheel]


def rms_error(est: EstimateTrace, truth: SimTrace, wheel: WheelId | str | None = None) -> float:
    """RMS of ``mu_hat - mu_true`` over active samples; ``nan`` when none is active."""
    if wheel is not None and WheelId.parse(wheel) != est.wheel:
        raise ValueError("estimate trace belongs to another wheel")
    err = (est.mu_hat - truth_for(est, truth))[est.active]
    if len(err) == 0:
        return float("nan")
    return float(np.sqrt(np.mean(err * err)))


def rms_error_all(est: EstimateTrace, truth: SimTrace) -> float:
    """RMS over every sample, held values included."""
    err = est.mu_hat - truth_for(est, truth)
    return float(np.sqrt(np.mean(err * err))) if len(err) else float("nan")


def plateau_bias(est: EstimateTrace, truth: SimTrace, start_s: float, end_s: float, skip_s: float = 3.0) -> float:
    """Mean error over ``[start_s + skip_s, end_s)``; ``nan`` when the interval is empty."""
    sel = (est.t >= start_s + skip_s) & (est.t < end_s)
    if not sel.any():
        return float("nan")
    return float(np.mean(est.mu_hat[sel] - truth_for(est, truth)[sel]))


def plateau_mean(est: EstimateTrace, start_s: float, end_s: float, skip_s: float = 3.0) -> float:
    sel = (est.t >= start_s + skip_s) & (est.t < end_s)
    return float(np.mean(est.mu_hat[sel])) if sel.any() else float("nan")


def convergence_times(est: EstimateTrace, truth: SimTrace, band: float = BAND) -> list[tuple[float, float]]:
    """Time to enter and stay within ``band`` of the truth after each friction change.

    For every change of this wheel's true friction at ``t0``, the result is
    the delay from ``t0`` to the first sample after which the error stays
    inside the band up to the next change (or the end of the trace). The
    delay is ``inf`` when the estimate is outside the band at the end of the
    interval. Returns ``(t0, delay)`` pairs.
    """
    mu = truth.mu_true[:, est.wheel]
    changes = np.flatnonzero(np.diff(mu) != 0) + 1
    bounds = list(truth.t[changes]) + [math.inf]
    err_ok = np.abs(est.mu_hat - truth_for(est, truth)) <= band + 1e-12
    out = []
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        sel = np.flatnonzero((est.t >= t0) & (est.t < t1))
        if len(sel) == 0:
            out.append((float(t0), math.inf))
            continue
        bad = sel[~err_ok[sel]]
        if len(bad) == 0:
            out.append((float(t0), 0.0))
        elif bad[-1] == sel[-1]:
            out.append((float(t0), math.inf))
        else:
            out.append((float(t0), float(est.t[bad[-1] + 1] - t0)))
    return out


@dataclass
class LatencyProfile:
    samples_us: np.ndarray
    mean_us: float
    p50_us: float
    p99_us: float
    edges_us: np.ndarray
    mass: np.ndarray

    @classmethod
    def from_samples(cls, samples_us, bins: int = 50) -> "LatencyProfile":
        s = np.asarray(samples_us, dtype=np.float64)
        if len(s) == 0:
            raise ValueError("no latency samples")
        hi = float(np.percentile(s, 99.9))
        edges = np.linspace(0.0, max(hi, float(s.min()) + 1e-9), bins + 1)
        counts, _ = np.histogram(np.clip(s, 0.0, edges[-1]), bins=edges)
        return cls(s, float(s.mean()), float(np.percentile(s, 50)), float(np.percentile(s, 99)), edges,
                   counts / counts.sum())

    def to_csv(self, path: str | Path | None = None) -> str:
        """Normalized histogram: bin edges in microseconds and the mass per bin."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("bin_lo_us", "bin_hi_us", "mass"))
        for lo, hi, m in zip(self.edges_us[:-1], self.edges_us[1:], self.mass):
            writer.writerow((_fmt(lo), _fmt(hi), _fmt(m)))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def latency_profile(update: Callable[[object], object], windows: list, min_updates: int = 10_000,
                    warmup: int = 200) -> LatencyProfile:
    """Time ``update(window)`` per call, cycling over ``windows`` until ``min_updates`` calls.

    ``windows`` are ready-made full observation windows; the first ``warmup``
    calls are not recorded.
    """
    if not windows:
        raise ValueError("no windows to replay")
    clock = time.perf_counter_ns
    for k in range(warmup):
        update(windows[k % len(windows)])
    samples = np.empty(min_updates)
    for k in range(min_updates):
        w = windows[k % len(windows)]
        t0 = clock()
        update(w)
        samples[k] = (clock() - t0) / 1000.0
    return LatencyProfile.from_samples(samples)
