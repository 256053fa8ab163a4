"""Sensor noise, low-pass conditioning and the sliding observation window."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy import signal

from trfc.errors import ConfigurationError
from trfc.vehicle import SAMPLE_RATE_HZ, SimTrace, WheelId

CUTOFF_HZ = 5.0
WINDOW_SIZE = 50
FZ_GUARD_N = 100.0


@dataclass(frozen=True)
class NoiseSpec:
    alpha_sd_rad: float = 0.002
    fy_sd_n: float = 40.0
    fz_sd_n: float = 40.0
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_sd_rad", "fy_sd_n", "fz_sd_n"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"noise {name} must be a non-negative number")

    @classmethod
    def none(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, seed)


def add_noise(trace: SimTrace, spec: NoiseSpec) -> SimTrace:
    """Perturb the alpha, Fy and Fz channels with independent zero-mean Gaussians.

    Each channel draws from its own child stream of ``spec.seed`` so changing
    one standard deviation leaves the other channels' noise untouched.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)]
    shape = trace.alpha.shape
    noisy = {}
    for rng, name, sd in zip(streams, ("alpha", "fy", "fz"), (spec.alpha_sd_rad, spec.fy_sd_n, spec.fz_sd_n)):
        draw = rng.standard_normal(shape)
        noisy[name] = getattr(trace, name) + sd * draw if sd > 0 else np.array(getattr(trace, name))
    return trace.replace(**noisy)


def lowpass_coefficients(cutoff_hz: float = CUTOFF_HZ, rate_hz: float = SAMPLE_RATE_HZ):
    """``(b, a)`` of the first-order bilinear-transform low-pass, prewarped at the cutoff."""
    k = math.tan(math.pi * cutoff_hz / rate_hz)
    b0 = k / (1.0 + k)
    a1 = (k - 1.0) / (k + 1.0)
    return np.array([b0, b0]), np.array([1.0, a1])


def lowpass_5hz(series, rate_hz: float = SAMPLE_RATE_HZ, cutoff_hz: float = CUTOFF_HZ) -> np.ndarray:
    """Unit-DC-gain first-order low-pass; the filter state starts at the first sample.

    Filters along axis 0, so an ``(n, k)`` array is treated as ``k`` channels.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("cannot filter an empty series")
    b, a = lowpass_coefficients(cutoff_hz, rate_hz)
    zi = signal.lfilter_zi(b, a)
    zi = zi.reshape((1,) + (1,) * (x.ndim - 1)) * x[:1]
    y, _ = signal.lfilter(b, a, x, axis=0, zi=zi)
    return y


class LowPassFilter:
    """Streaming form of :func:`lowpass_5hz` for one channel."""

    def __init__(self, cutoff_hz: float = CUTOFF_HZ, rate_hz: float = SAMPLE_RATE_HZ):
        (self._b0, _), (_, self._a1) = lowpass_coefficients(cutoff_hz, rate_hz)
        self._x_prev = None
        self._y_prev = None

    def __call__(self, x: float) -> float:
        if self._y_prev is None:
            self._x_prev = self._y_prev = x
            return x
        y = self._b0 * (x + self._x_prev) - self._a1 * self._y_prev
        self._x_prev, self._y_prev = x, y
        return y


class FeatureSample(NamedTuple):
    t_s: float
    alpha_rad: float
    fy_over_fz: float
    fz_n: float


@dataclass(frozen=True)
class FeatureStream:
    """Filtered per-wheel features; only samples passing the load guard are kept.

    ``index`` holds each sample's step number in the source trace.
    """

    wheel: WheelId
    t: np.ndarray
    alpha: np.ndarray
    fy_over_fz: np.ndarray
    fz: np.ndarray
    index: np.ndarray
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[FeatureSample]:
        for row in zip(self.t.tolist(), self.alpha.tolist(), self.fy_over_fz.tolist(), self.fz.tolist()):
            yield FeatureSample(*row)

    def __getitem__(self, k: int) -> FeatureSample:
        return FeatureSample(float(self.t[k]), float(self.alpha[k]), float(self.fy_over_fz[k]), float(self.fz[k]))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t, self.alpha, self.fy_over_fz, self.fz):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def build_features(trace: SimTrace, wheel: WheelId | str) -> FeatureStream:
    """Low-pass alpha, Fy and Fz for one wheel and form the normalized force."""
    w = WheelId.parse(wheel)
    alpha = lowpass_5hz(trace.alpha[:, w], trace.sample_rate_hz)
    fy = lowpass_5hz(trace.fy[:, w], trace.sample_rate_hz)
    fz = lowpass_5hz(trace.fz[:, w], trace.sample_rate_hz)
    ok = fz > FZ_GUARD_N
    ratio = np.divide(fy, fz, out=np.zeros_like(fy), where=ok)
    idx = np.flatnonzero(ok)
    return FeatureStream(w, np.array(trace.t[ok]), alpha[ok], ratio[ok], fz[ok], idx, int(np.count_nonzero(~ok)))


class ObservationWindow:
    """Ring buffer of the most recent ``capacity`` feature samples.

    Pushing a sample that does not follow the previous one by exactly one
    period (within half a period) empties the window first.
    """

    def __init__(self, capacity: int = WINDOW_SIZE, rate_hz: float = SAMPLE_RATE_HZ):
        if capacity < 1:
            raise ConfigurationError("window capacity must be positive")
        self.capacity = capacity
        self.period = 1.0 / rate_hz
        self._buf = np.zeros((capacity, 4))
        self._head = 0
        self.fill = 0
        self.resets = 0

    @property
    def full(self) -> bool:
        return self.fill == self.capacity

    @property
    def last_t(self) -> float | None:
        if self.fill == 0:
            return None
        return float(self._buf[(self._head - 1) % self.capacity, 0])

    def reset(self) -> None:
        self._head = 0
        self.fill = 0

    def push(self, s: FeatureSample) -> "ObservationWindow":
        last = self.last_t
        if last is not None and abs(s[0] - last - self.period) > 0.5 * self.period:
            self.reset()
            self.resets += 1
        self._buf[self._head] = s
        self._head = (self._head + 1) % self.capacity
        self.fill = min(self.fill + 1, self.capacity)
        return self

    def _ordered(self, col: int) -> np.ndarray:
        if self.fill < self.capacity:
            return self._buf[: self.fill, col].copy()
        return np.concatenate((self._buf[self._head:, col], self._buf[: self._head, col]))

    def samples(self) -> list[FeatureSample]:
        rows = np.column_stack([self._ordered(c) for c in range(4)])
        return [FeatureSample(*map(float, row)) for row in rows]

    @property
    def t(self) -> np.ndarray:
        return self._ordered(0)

    @property
    def alpha(self) -> np.ndarray:
        return self._ordered(1)

    @property
    def fy_over_fz(self) -> np.ndarray:
        return self._ordered(2)

    @property
    def fz(self) -> np.ndarray:
        return self._ordered(3)

    def max_abs_alpha(self) -> float:
        if self.fill == 0:
            return 0.0
        return float(np.max(np.abs(self._buf[: self.fill, 1])))

    def features(self) -> np.ndarray:
        """Flattened ``[alpha_1..alpha_N, ratio_1..ratio_N]``, oldest first."""
        return np.concatenate((self.alpha, self.fy_over_fz))


def push(window: ObservationWindow, s: FeatureSample) -> ObservationWindow:
    return window.push(s)


def sliding_windows(stream: FeatureStream, size: int = WINDOW_SIZE, stride: int = 1):
    """All full windows of ``size`` consecutive samples in ``stream``.

    Returns ``(end, alpha, ratio)`` where ``end`` indexes the last sample of
    each window in the stream and ``alpha``/``ratio`` have shape ``(m, size)``.
    Windows that would span a gap in the source trace are dropped.
    """
    n = len(stream)
    if n < size:
        empty = np.empty((0, size))
        return np.empty(0, dtype=np.int64), empty, empty
    idx = stream.index
    ends = np.arange(size - 1, n, stride)
    contiguous = idx[ends] - idx[ends - size + 1] == size - 1
    ends = ends[contiguous]
    view_a = np.lib.stride_tricks.sliding_window_view(stream.alpha, size)
    view_r = np.lib.stride_tricks.sliding_window_view(stream.fy_over_fz, size)
    return ends, view_a[ends - size + 1], view_r[ends - size + 1]
