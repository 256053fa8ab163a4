"""Time-delay neural network friction estimator.

The network sees one observation window as a flat vector of ``2 * taps``
values (the slip-angle delay line followed by the normalized-force delay
line, oldest sample first), passes it through one ``tanh`` hidden layer and
a single linear output neuron, and returns the friction coefficient.

Inputs and target are min/max scaled to ``[-1, 1]`` with ranges taken from
the training split; the ranges are stored with the weights.

Binary model format (all integers ``<u4``, all reals ``<f8``)::

    magic      8 bytes  b"TRFCTDNN"
    version    u4       currently 1
    taps       u4       delay-line length per input channel
    channels   u4       input channels (2)
    hidden     u4       hidden neurons
    outputs    u4       output neurons (1)
    ranges     6 x f8   alpha_min alpha_max ratio_min ratio_max mu_min mu_max
    W1         hidden x (channels*taps) f8, row-major
    b1         hidden f8
    W2         outputs x hidden f8, row-major
    b2         outputs f8
"""

from __future__ import annotations

import enum
import io
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from trfc.errors import ConfigurationError
from trfc.nls import EstimateStep
from trfc.signals import ObservationWindow

MAGIC = b"TRFCTDNN"
FORMAT_VERSION = 1
MU_CLAMP = (0.05, 1.5)
HIDDEN = 50
SPLITS = ("train", "validation", "test")


@dataclass
class TdnnModel:
    """Weights and scaling of a one-hidden-layer TDNN.

    Attributes:
        w1: Hidden weights, shape ``(hidden, 2 * taps)``.
        b1: Hidden biases, shape ``(hidden,)``.
        w2: Output weights, shape ``(hidden,)``.
        b2: Output bias.
        x_range: ``(alpha_min, alpha_max, ratio_min, ratio_max)`` used for input scaling.
        y_range: ``(mu_min, mu_max)`` used for output scaling.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    x_range: tuple[float, float, float, float]
    y_range: tuple[float, float]

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        self.x_range = tuple(float(v) for v in self.x_range)
        self.y_range = tuple(float(v) for v in self.y_range)
        hidden, width = self.w1.shape
        if width % 2 or self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ConfigurationError("inconsistent TDNN layer shapes")
        a_lo, a_hi, r_lo, r_hi = self.x_range
        if not (a_hi > a_lo and r_hi > r_lo and self.y_range[1] > self.y_range[0]):
            raise ConfigurationError("degenerate TDNN scaling range")
        if not all(np.isfinite(a).all() for a in (self.w1, self.b1, self.w2)) or not math.isfinite(self.b2):
            raise ConfigurationError("TDNN weights must be finite")

    @property
    def taps(self) -> int:
        return self.w1.shape[1] // 2

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialize(cls, taps: int, hidden: int, x_range, y_range, rng: np.random.Generator) -> "TdnnModel":
        width = 2 * taps
        w1 = rng.normal(0.0, 1.0 / math.sqrt(width), (hidden, width))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), hidden)
        return cls(w1, np.zeros(hidden), w2, 0.0, x_range, y_range)

    # -- scaling -----------------------------------------------------------
    def _x_bounds(self):
        a_lo, a_hi, r_lo, r_hi = self.x_range
        t = self.taps
        lo = np.concatenate((np.full(t, a_lo), np.full(t, r_lo)))
        hi = np.concatenate((np.full(t, a_hi), np.full(t, r_hi)))
        return lo, hi

    def scale_x(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self._x_bounds()
        return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def unscale_x(self, xs: np.ndarray) -> np.ndarray:
        lo, hi = self._x_bounds()
        return (np.asarray(xs, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo

    def scale_y(self, y):
        lo, hi = self.y_range
        return 2.0 * (np.asarray(y, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def unscale_y(self, ys):
        lo, hi = self.y_range
        return (np.asarray(ys, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo

    # -- evaluation --------------------------------------------------------
    def raw_output(self, xs: np.ndarray) -> np.ndarray:
        """Network output in scaled units for already-scaled inputs ``(m, width)``."""
        return np.tanh(xs @ self.w1.T + self.b1) @ self.w2 + self.b2

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Friction estimates for raw feature rows ``(m, width)``, clamped to the output bounds."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mu = self.unscale_y(self.raw_output(self.scale_x(x)))
        return np.clip(mu, *MU_CLAMP)

    # -- parameter vector view used by the optimizers ----------------------
    def get_params(self) -> np.ndarray:
        return np.concatenate((self.w1.ravel(), self.b1, self.w2, [self.b2]))

    def set_params(self, theta: np.ndarray) -> None:
        h, w = self.w1.shape
        k = h * w
        self.w1 = theta[:k].reshape(h, w).copy()
        self.b1 = theta[k:k + h].copy()
        self.w2 = theta[k + h:k + 2 * h].copy()
        self.b2 = float(theta[k + 2 * h])

    def copy(self) -> "TdnnModel":
        return TdnnModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2, self.x_range, self.y_range)


def forward(model: TdnnModel, window: ObservationWindow) -> float:
    """Estimate friction from a full observation window."""
    if not window.full:
        raise ValueError("window is not full")
    if window.capacity != model.taps:
        raise ConfigurationError(f"window holds {window.capacity} samples, model expects {model.taps}")
    x = window.features()
    if not np.isfinite(x).all():
        raise ValueError("window features must be finite")
    return float(model.predict(x)[0])


def gradients(model: TdnnModel, xs: np.ndarray, ys: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-squared error in scaled units and its gradient w.r.t. ``get_params()``."""
    h = np.tanh(xs @ model.w1.T + model.b1)
    err = h @ model.w2 + model.b2 - ys
    n = len(ys)
    loss = float(err @ err) / n
    e = err * (2.0 / n)
    g_w2 = h.T @ e
    g_b2 = e.sum()
    dh = np.outer(e, model.w2) * (1.0 - h * h)
    g_w1 = dh.T @ xs
    g_b1 = dh.sum(axis=0)
    return loss, np.concatenate((g_w1.ravel(), g_b1, g_w2, [g_b2]))


def _jacobian(model: TdnnModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample output Jacobian ``(m, n_params)`` and outputs, in scaled units."""
    h = np.tanh(xs @ model.w1.T + model.b1)
    out = h @ model.w2 + model.b2
    d = model.w2 * (1.0 - h * h)
    j_w1 = (d[:, :, None] * xs[:, None, :]).reshape(len(xs), -1)
    jac = np.hstack((j_w1, d, h, np.ones((len(xs), 1))))
    return jac, out


class Optimizer(str, enum.Enum):
    ADAM = "adam"
    LEVENBERG_MARQUARDT = "lm"

    @classmethod
    def parse(cls, value) -> "Optimizer":
        if isinstance(value, cls):
            return value
        aliases = {"adaptive_first_order": cls.ADAM, "levenberg_marquardt_batch": cls.LEVENBERG_MARQUARDT}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown optimizer {value!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``learning_rate`` and ``batch_size`` apply to Adam only. The LM mode is a
    full-batch damped Gauss-Newton step on the normal equations; its cost
    grows with the square of the parameter count, so it suits small datasets.
    """

    max_epochs: int = 1000
    optimizer: Optimizer = Optimizer.ADAM
    patience: int = 25
    seed: int = 0
    hidden: int = HIDDEN
    learning_rate: float = 1e-3
    batch_size: int = 256
    lm_damping_initial: float = 1e-3
    histogram_bins: int = 20
    histogram_range: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer.parse(self.optimizer))
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if self.hidden < 1 or self.batch_size < 1:
            raise ConfigurationError("hidden width and batch size must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")


@dataclass
class SplitMetrics:
    n: int
    mse: float
    r: float
    within_005: float


@dataclass
class TrainReport:
    """Training outcome.

    ``histogram_edges``/``histogram_counts`` bin the prediction error
    ``mu_hat - mu`` over every window of the dataset; the outermost bins are
    open so the counts always sum to the dataset size.
    """

    splits: dict[str, SplitMetrics]
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    train_time_s: float
    epochs: int
    best_epoch: int
    optimizer: str
    diverged: bool = False
    val_history: list[float] = field(default_factory=list)

    def summary_rows(self) -> list[tuple[str, int, float, float, float]]:
        return [(name, m.n, m.mse, m.r, m.within_005) for name, m in self.splits.items()]


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _split_metrics(pred: np.ndarray, target: np.ndarray) -> SplitMetrics:
    err = pred - target
    return SplitMetrics(len(target), float(np.mean(err * err)), _correlation(pred, target),
                        float(np.mean(np.abs(err) <= 0.05)))


def error_histogram(errors: np.ndarray, bins: int = 20, limit: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Histogram with ``bins`` equal bins on ``[-limit, limit]``; values outside land in the end bins."""
    edges = np.linspace(-limit, limit, bins + 1)
    counts, _ = np.histogram(np.clip(errors, -limit, limit), bins=edges)
    return edges, counts


def fit_scaling(x: np.ndarray, y: np.ndarray, taps: int):
    """Per-channel input ranges and the target range from training rows."""
    alpha, ratio = x[:, :taps], x[:, taps:]
    x_range = (float(alpha.min()), float(alpha.max()), float(ratio.min()), float(ratio.max()))
    y_range = (float(y.min()), float(y.max()))
    if y_range[1] <= y_range[0]:
        raise ConfigurationError("training targets must span more than one friction level")
    return x_range, y_range


def train(x: np.ndarray, y: np.ndarray, split: np.ndarray, cfg: TrainConfig = TrainConfig(),
          progress: Callable[[int, float], None] | None = None) -> tuple[TdnnModel, TrainReport]:
    """Fit a TDNN on rows of ``x`` (width ``2 * taps``) with targets ``y``.

    ``split`` holds 0/1/2 per row for train/validation/test. The weights of
    the epoch with the lowest validation mse are returned. Training stops
    after ``cfg.patience`` epochs without improvement, at ``cfg.max_epochs``,
    or when the loss becomes non-finite (the best finite weights are kept).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    split = np.asarray(split)
    if x.ndim != 2 or x.shape[1] % 2 or len(x) != len(y) or len(y) != len(split):
        raise ConfigurationError("dataset arrays have inconsistent shapes")
    idx = [np.flatnonzero(split == k) for k in range(3)]
    if len(idx[0]) == 0 or len(idx[1]) == 0:
        raise ConfigurationError("training and validation splits must be non-empty")
    taps = x.shape[1] // 2
    rng = np.random.default_rng(cfg.seed)
    x_range, y_range = fit_scaling(x[idx[0]], y[idx[0]], taps)
    model = TdnnModel.initialize(taps, cfg.hidden, x_range, y_range, rng)
    xs = model.scale_x(x)
    ys = model.scale_y(y)
    tr, va = idx[0], idx[1]

    def val_mse(m: TdnnModel) -> float:
        return float(np.mean((m.unscale_y(m.raw_output(xs[va])) - y[va]) ** 2))

    start = time.perf_counter()
    best = (val_mse(model), model.copy(), 0)
    history: list[float] = []
    bad = 0
    diverged = False
    epoch = 0
    step_fn = _adam_epochs if cfg.optimizer is Optimizer.ADAM else _lm_epochs
    for epoch, ok in step_fn(model, xs[tr], ys[tr], cfg, rng):
        if not ok:
            diverged = True
            break
        vm = val_mse(model)
        if not math.isfinite(vm):
            diverged = True
            break
        history.append(vm)
        if progress is not None:
            progress(epoch, vm)
        if vm < best[0]:
            best = (vm, model.copy(), epoch)
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    elapsed = time.perf_counter() - start
    model = best[1]
    pred = model.predict(x)
    splits = {name: _split_metrics(pred[i], y[i]) for name, i in zip(SPLITS, idx) if len(i)}
    edges, counts = error_histogram(pred - y, cfg.histogram_bins, cfg.histogram_range)
    report = TrainReport(splits, edges, counts, elapsed, epoch, best[2], cfg.optimizer.value, diverged, history)
    return model, report


def _adam_epochs(model: TdnnModel, xs, ys, cfg: TrainConfig, rng):
    theta = model.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    n = len(ys)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            loss, g = gradients(model, xs[batch], ys[batch])
            if not (math.isfinite(loss) and np.isfinite(g).all()):
                yield epoch, False
                return
            t += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - cfg.learning_rate * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            model.set_params(theta)
        yield epoch, True


def _lm_epochs(model: TdnnModel, xs, ys, cfg: TrainConfig, rng, chunk: int = 1024):
    del rng
    lam = cfg.lm_damping_initial

    def normal_equations():
        n_par = model.get_params().size
        jtj = np.zeros((n_par, n_par))
        jte = np.zeros(n_par)
        sse = 0.0
        for s in range(0, len(ys), chunk):
            jac, out = _jacobian(model, xs[s:s + chunk])
            err = out - ys[s:s + chunk]
            jtj += jac.T @ jac
            jte += jac.T @ err
            sse += float(err @ err)
        return jtj, jte, sse

    def sse_at(theta):
        trial = model.copy()
        trial.set_params(theta)
        err = trial.raw_output(xs) - ys
        return float(err @ err)

    for epoch in range(1, cfg.max_epochs + 1):
        theta = model.get_params()
        jtj, jte, sse = normal_equations()
        if not math.isfinite(sse):
            yield epoch, False
            return
        diag = np.diag(jtj).copy()
        accepted = False
        while lam < 1e10:
            a = jtj + lam * np.diag(np.maximum(diag, 1e-12))
            try:
                step = np.linalg.solve(a, -jte)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            new = sse_at(theta + step)
            if math.isfinite(new) and new < sse:
                model.set_params(theta + step)
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        yield epoch, True
        if not accepted:
            return


# -- serialization ----------------------------------------------------------

_HEADER = struct.Struct("<8sIIIII")


def model_to_bytes(model: TdnnModel) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, model.taps, 2, model.hidden, 1))
    buf.write(np.asarray(model.x_range + model.y_range, dtype="<f8").tobytes())
    for arr in (model.w1, model.b1, model.w2, np.array([model.b2])):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> TdnnModel:
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise ConfigurationError("not a TDNN model file (bad magic)")
    magic, version, taps, channels, hidden, outputs = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported TDNN model version {version}")
    if channels != 2 or outputs != 1 or taps < 1 or hidden < 1:
        raise ConfigurationError("unsupported TDNN layer layout")
    width = channels * taps
    n_vals = 6 + hidden * width + hidden + hidden + 1
    body = data[_HEADER.size:]
    if len(body) != 8 * n_vals:
        raise ConfigurationError("TDNN model file is truncated or has trailing data")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    ranges, rest = vals[:6], vals[6:]
    w1 = rest[:hidden * width].reshape(hidden, width)
    rest = rest[hidden * width:]
    return TdnnModel(w1, rest[:hidden], rest[hidden:2 * hidden], rest[2 * hidden],
                     tuple(ranges[:4]), tuple(ranges[4:]))


def save_model(model: TdnnModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> TdnnModel:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"model file not found: {path}")
    return model_from_bytes(path.read_bytes())


class TdnnEstimator:
    """One wheel's TDNN estimator with the same gating and hold semantics as the NLS estimator."""

    name = "tdnn"

    def __init__(self, model: TdnnModel, alpha_threshold_rad: float = math.radians(1.0), mu_initial: float = 0.5):
        self.model = model
        self.alpha_threshold_rad = alpha_threshold_rad
        self.mu_hat = mu_initial

    def update(self, window: ObservationWindow) -> EstimateStep:
        if not window.full or window.max_abs_alpha() < self.alpha_threshold_rad:
            return EstimateStep(self.mu_hat, False, 0)
        self.mu_hat = forward(self.model, window)
        return EstimateStep(self.mu_hat, True, 0)


def update(estimator: TdnnEstimator, window: ObservationWindow) -> EstimateStep:
    return estimator.update(window)
