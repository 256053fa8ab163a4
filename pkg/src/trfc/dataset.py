"""Training-set generation for the TDNN estimator.

At every friction level the simulator runs a family of left-turn maneuvers
(constant steer with a friction step into the level, and slow steering ramps)
at several speeds. Noisy traces go through the same signal chain the
estimators use, every wheel is cut into sliding windows, and windows whose
features leave the training envelope are skipped. Each kept window is also
stored mirrored (slip angle and normalized force negated, same target), which
stands in for the right-turn runs.

Windows whose largest slip angle stays below ``min_excitation_rad`` are
skipped as well: there the tire works on the linear part of its curve, where
the force is the same for every friction level and the target cannot be
learned.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from trfc.errors import ConfigurationError, SimulationFault
from trfc.signals import WINDOW_SIZE, NoiseSpec, add_noise, build_features, sliding_windows
from trfc.vehicle import FrictionSchedule, Maneuver, SimTrace, VehicleParams, read_trace_csv, run_maneuver, \
    write_trace_csv

MU_LEVELS = tuple(round(0.3 + 0.1 * k, 1) for k in range(10))
SPLIT_NAMES = ("train", "validation", "test")
SKIP_REASONS = ("alpha_range", "fy_range", "fz_range", "excitation", "transition")


@dataclass(frozen=True)
class DatasetConfig:
    """Maneuver family, window acceptance rules and split.

    Attributes:
        mu_levels: Friction levels to cover.
        speeds_mps: Constant speeds of the maneuvers.
        step_steer_deg: Front-left steer angles of the constant-steer runs.
        step_at_s: Time of the friction step into the target level.
        step_duration_s: Recorded length of a constant-steer run.
        settle_s: Unrecorded settling time at the initial friction.
        ramp_final_deg: Final front-left angle of the ramp runs.
        ramp_s: Ramp duration.
        stride: Hop between kept windows, in samples.
        min_excitation_rad: Smallest admissible window peak ``|alpha|``.
        alpha_limit_rad: Envelope bound on ``|alpha|``.
        fy_limit_n: Envelope bound on ``|Fy|``.
        fz_range_n: Envelope bounds on ``Fz``.
        spin_alpha_rad: A run is truncated at the first sample where any
            wheel exceeds this slip angle.
        window: Window length in samples.
        mirror: Add the mirrored copy of every window.
        split_fractions: Train/validation/test fractions.
        noise_realizations: Independent sensor-noise draws per simulated run;
            each draw contributes its own windows.
        include_transitions: Keep windows during which the wheel's true
            friction changes. They are labelled with the friction at their
            last sample; they are left out by default because the few of
            them teach the network to rely on its newest taps, which
            roughly doubles its sensitivity to sensor noise.
    """

    mu_levels: tuple[float, ...] = MU_LEVELS
    speeds_mps: tuple[float, ...] = (6.0, 8.0, 10.0)
    step_steer_deg: tuple[float, ...] = (-6.0, -10.0, -14.0, -18.36)
    step_at_s: float = 2.0
    step_duration_s: float = 8.0
    settle_s: float = 4.0
    ramp_final_deg: float = -24.0
    ramp_s: float = 20.0
    stride: int = 1
    min_excitation_rad: float = 0.05
    alpha_limit_rad: float = 0.12
    fy_limit_n: float = 2800.0
    fz_range_n: tuple[float, float] = (2000.0, 4400.0)
    spin_alpha_rad: float = 0.3
    window: int = WINDOW_SIZE
    mirror: bool = True
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    noise_realizations: int = 1
    include_transitions: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mu_levels", tuple(float(m) for m in self.mu_levels))
        object.__setattr__(self, "speeds_mps", tuple(float(u) for u in self.speeds_mps))
        object.__setattr__(self, "step_steer_deg", tuple(float(d) for d in self.step_steer_deg))
        object.__setattr__(self, "fz_range_n", tuple(float(f) for f in self.fz_range_n))
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        if len(self.mu_levels) < 2:
            raise ConfigurationError("need at least two friction levels")
        if self.noise_realizations < 1:
            raise ConfigurationError("noise_realizations must be at least 1")
        if self.stride < 1 or self.window < 2:
            raise ConfigurationError("stride and window must be positive")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9 \
                or min(self.split_fractions) < 0:
            raise ConfigurationError("split fractions must be three non-negative numbers summing to 1")
        if not self.speeds_mps or not all(u > 0 for u in self.speeds_mps):
            raise ConfigurationError("speeds must be positive")


@dataclass(frozen=True)
class RunSpec:
    run: int
    kind: str
    mu: float
    mu_before: float
    speed_mps: float
    steer_deg: float
    noise_seed: int


@dataclass
class Dataset:
    """Feature windows with targets and split labels.

    ``x`` holds raw (unscaled) features, one row per window laid out as the
    observation window's ``features()``. The index arrays locate every row in
    ``traces``: run number, wheel, step of the window's last sample, and
    whether the row is the mirrored copy.
    """

    x: np.ndarray
    y: np.ndarray
    split: np.ndarray
    run: np.ndarray
    wheel: np.ndarray
    end_step: np.ndarray
    mirrored: np.ndarray
    traces: list[SimTrace] = field(repr=False)
    runs: list[RunSpec] = field(repr=False)
    skipped: dict[str, int] = field(default_factory=dict)
    dropped_runs: int = 0
    window: int = WINDOW_SIZE

    def __len__(self) -> int:
        return len(self.y)

    def split_counts(self) -> dict[str, int]:
        return {name: int(np.count_nonzero(self.split == k)) for k, name in enumerate(SPLIT_NAMES)}

    def level_counts(self) -> dict[float, int]:
        levels, counts = np.unique(self.y, return_counts=True)
        return {float(lv): int(c) for lv, c in zip(levels, counts)}


def plan_runs(cfg: DatasetConfig, seed: int) -> list[tuple[RunSpec, Maneuver, FrictionSchedule]]:
    """The maneuver family; the friction before each step is drawn from the other levels."""
    rng = np.random.default_rng(seed)
    plan = []

    def add(kind, mu, before, u, steer, m, sched):
        run = len(plan)
        noise_seed = int(np.random.SeedSequence([seed, run]).generate_state(1)[0])
        plan.append((RunSpec(run, kind, mu, before, u, steer, noise_seed), m, sched))

    for mu in cfg.mu_levels:
        for u in cfg.speeds_mps:
            for steer in cfg.step_steer_deg:
                before = float(rng.choice([lv for lv in cfg.mu_levels if lv != mu]))
                m = Maneuver.constant(steer, duration_s=cfg.step_duration_s, u_target_mps=u, settle_s=cfg.settle_s)
                sched = FrictionSchedule.uniform([(0.0, before), (cfg.step_at_s, mu)])
                add("step", mu, before, u, steer, m, sched)
            m = Maneuver.ramp(cfg.ramp_final_deg, cfg.ramp_s, u_target_mps=u)
            add("ramp", mu, mu, u, cfg.ramp_final_deg, m, FrictionSchedule.constant(mu))
    return plan


def _truncate_spin(trace: SimTrace, limit: float) -> SimTrace:
    over = np.flatnonzero(np.abs(trace.alpha).max(axis=1) > limit)
    return trace if len(over) == 0 else trace.head(int(over[0]))


def _constant_friction(trace: SimTrace, fs, wheel: int, ends: np.ndarray, cfg: DatasetConfig) -> np.ndarray:
    mu = np.lib.stride_tricks.sliding_window_view(trace.mu_true[fs.index, wheel], cfg.window)[ends - cfg.window + 1]
    return mu.min(axis=1) == mu.max(axis=1)


def extract_windows(trace: SimTrace, wheel: int, cfg: DatasetConfig, skipped: dict[str, int] | None = None):
    """Admissible windows of one wheel: ``(end_step, alpha, ratio)``.

    Windows are checked against the envelope on the filtered features in the
    order of :data:`SKIP_REASONS`; the first failed check is counted in
    ``skipped``.
    """
    fs = build_features(trace, wheel)
    ends, alpha, ratio = sliding_windows(fs, cfg.window, cfg.stride)
    if len(ends) == 0:
        return np.empty(0, dtype=np.int64), alpha, ratio
    fz = np.lib.stride_tricks.sliding_window_view(fs.fz, cfg.window)[ends - cfg.window + 1]
    peak = np.abs(alpha).max(axis=1)
    steady = np.ones(len(ends), dtype=bool)
    if not cfg.include_transitions:
        steady = _constant_friction(trace, fs, wheel, ends, cfg)
    checks = (
        peak <= cfg.alpha_limit_rad,
        np.abs(ratio * fz).max(axis=1) <= cfg.fy_limit_n,
        (fz.min(axis=1) >= cfg.fz_range_n[0]) & (fz.max(axis=1) <= cfg.fz_range_n[1]),
        peak >= cfg.min_excitation_rad,
        steady,
    )
    keep = np.ones(len(ends), dtype=bool)
    for reason, ok in zip(SKIP_REASONS, checks):
        if skipped is not None:
            skipped[reason] = skipped.get(reason, 0) + int(np.count_nonzero(keep & ~ok))
        keep &= ok
    return fs.index[ends[keep]], alpha[keep], ratio[keep]


def assign_splits(n: int, fractions, seed: int) -> np.ndarray:
    """Seeded random 0/1/2 labels in the given proportions."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    split = np.empty(n, dtype=np.int8)
    split[order[:n_train]] = 0
    split[order[n_train:n_train + n_val]] = 1
    split[order[n_train + n_val:]] = 2
    return split


def generate_dataset(params: VehicleParams, noise: NoiseSpec, seed: int,
                     cfg: DatasetConfig = DatasetConfig()) -> Dataset:
    """Simulate the maneuver family and collect labelled windows.

    A run that faults is dropped; a run that spins is kept up to the spin
    (and dropped if that leaves less than one window).
    The split is drawn per original window and its mirrored copy inherits it.
    """
    skipped = {reason: 0 for reason in SKIP_REASONS}
    traces, runs = [], []
    cols = {k: [] for k in ("x", "y", "run", "wheel", "end")}
    dropped = 0
    for spec, m, sched in plan_runs(cfg, seed):
        try:
            clean = run_maneuver(m, sched, params, seed)
        except SimulationFault:
            dropped += 1
            continue
        clean = _truncate_spin(clean, cfg.spin_alpha_rad)
        if len(clean) < cfg.window:
            dropped += 1
            continue
        for draw in range(cfg.noise_realizations):
            run_spec = spec if draw == 0 else replace(
                spec, noise_seed=int(np.random.SeedSequence([spec.noise_seed, draw]).generate_state(1)[0]))
            noisy = add_noise(clean, NoiseSpec(noise.alpha_sd_rad, noise.fy_sd_n, noise.fz_sd_n, run_spec.noise_seed))
            slot = len(traces)
            traces.append(noisy)
            runs.append(run_spec)
            for wheel in range(4):
                end, alpha, ratio = extract_windows(noisy, wheel, cfg, skipped)
                if len(end) == 0:
                    continue
                cols["x"].append(np.hstack((alpha, ratio)))
                cols["y"].append(noisy.mu_true[end, wheel])
                cols["run"].append(np.full(len(end), slot))
                cols["wheel"].append(np.full(len(end), wheel))
                cols["end"].append(end)
    if not cols["x"]:
        raise ConfigurationError("no admissible windows were generated")
    x = np.vstack(cols["x"])
    y = np.concatenate(cols["y"])
    run = np.concatenate(cols["run"])
    wheel = np.concatenate(cols["wheel"])
    end = np.concatenate(cols["end"])
    split = assign_splits(len(y), cfg.split_fractions, seed)
    mirrored = np.zeros(len(y), dtype=bool)
    if cfg.mirror:
        x = np.vstack((x, -x))
        y, run, wheel, end, split = (np.concatenate((a, a)) for a in (y, run, wheel, end, split))
        mirrored = np.concatenate((mirrored, ~mirrored))
    return Dataset(x, y, split, run, wheel, end, mirrored, traces, runs, skipped, dropped, cfg.window)


# -- persistence ------------------------------------------------------------

INDEX_COLUMNS = ("run", "wheel", "end_step", "mirrored", "split", "target")


def save_dataset(ds: Dataset, directory: str | Path, meta: dict | None = None) -> Path:
    """Write noisy traces (trace CSV schema), the window index and a JSON manifest."""
    directory = Path(directory)
    (directory / "traces").mkdir(parents=True, exist_ok=True)
    for k, trace in enumerate(ds.traces):
        write_trace_csv(trace, directory / "traces" / f"run_{k:04d}.csv")
    with (directory / "windows.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_COLUMNS)
        for row in zip(ds.run, ds.wheel, ds.end_step, ds.mirrored, ds.split, ds.y):
            writer.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3]), SPLIT_NAMES[row[4]],
                             format(float(row[5]), ".12g")])
    manifest = {
        "windows": len(ds),
        "window": ds.window,
        "runs": [asdict(r) for r in ds.runs],
        "skipped": ds.skipped,
        "dropped_runs": ds.dropped_runs,
        "split_counts": ds.split_counts(),
    }
    manifest.update(meta or {})
    (directory / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory: str | Path) -> Dataset:
    """Rebuild a dataset saved by :func:`save_dataset` from its traces and index."""
    directory = Path(directory)
    manifest_path = directory / "dataset.json"
    if not manifest_path.is_file():
        raise ConfigurationError(f"{directory}: no dataset.json")
    manifest = json.loads(manifest_path.read_text())
    window = int(manifest["window"])
    runs = [RunSpec(**r) for r in manifest["runs"]]
    traces = [read_trace_csv(directory / "traces" / f"run_{k:04d}.csv") for k in range(len(runs))]
    with (directory / "windows.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != INDEX_COLUMNS:
            raise ConfigurationError(f"{directory}: windows.csv has an unexpected header")
        rows = [r for r in reader if r]
    run = np.array([int(r[0]) for r in rows], dtype=np.int64)
    wheel = np.array([int(r[1]) for r in rows], dtype=np.int64)
    end = np.array([int(r[2]) for r in rows], dtype=np.int64)
    mirrored = np.array([r[3] == "1" for r in rows])
    split = np.array([SPLIT_NAMES.index(r[4]) for r in rows], dtype=np.int8)
    y = np.array([float(r[5]) for r in rows])
    x = np.empty((len(rows), 2 * window))
    for (r, w) in sorted(set(zip(run.tolist(), wheel.tolist()))):
        fs = build_features(traces[r], w)
        pos = np.full(len(traces[r]), -1, dtype=np.int64)
        pos[fs.index] = np.arange(len(fs))
        sel = np.flatnonzero((run == r) & (wheel == w))
        last = pos[end[sel]]
        if (last < window - 1).any():
            raise ConfigurationError(f"{directory}: window index does not match trace run {r}")
        taps = last[:, None] + np.arange(-window + 1, 1)[None, :]
        x[sel, :window] = fs.alpha[taps]
        x[sel, window:] = fs.fy_over_fz[taps]
    x[mirrored] = -x[mirrored]
    return Dataset(x, y, split, run, wheel, end, mirrored, traces, runs, dict(manifest.get("skipped", {})),
                   int(manifest.get("dropped_runs", 0)), window)


def envelope_violations(ds: Dataset, cfg: DatasetConfig = DatasetConfig()) -> int:
    """Number of stored windows whose slip angle leaves the envelope (0 for a valid set)."""
    w = ds.window
    return int(np.count_nonzero(np.abs(ds.x[:, :w]).max(axis=1) > cfg.alpha_limit_rad + 1e-12))


def quick_config(**overrides) -> DatasetConfig:
    """A reduced maneuver family for smoke tests."""
    base = dict(speeds_mps=(8.0,), step_steer_deg=(-14.0,), step_duration_s=4.0, settle_s=2.0,
                ramp_final_deg=-20.0, ramp_s=6.0, stride=5)
    base.update(overrides)
    return DatasetConfig(**base)

