"""Figures rendered to PNG bytes with the non-interactive matplotlib backend."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from trfc.metrics import EstimateTrace, LatencyProfile  # noqa: E402
from trfc.vehicle import WHEEL_NAMES, SimTrace, WheelId  # noqa: E402


def _png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def estimate_figure(trace: SimTrace, estimates: dict[str, dict[WheelId, EstimateTrace]], wheel: WheelId) -> bytes:
    """True and estimated friction of one wheel, with its slip angle below."""
    fig, (ax, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 5.5), height_ratios=(2, 1))
    ax.plot(trace.t, trace.mu_true[:, wheel], "k-", lw=1.5, label="true")
    for name, per_wheel in estimates.items():
        if wheel in per_wheel:
            tr = per_wheel[wheel]
            ax.plot(tr.t, tr.mu_hat, lw=1.0, label=name)
    ax.set_ylabel("friction coefficient")
    ax.set_ylim(0.0, 1.6)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    ax.set_title(f"wheel {WHEEL_NAMES[wheel]}")
    ax2.plot(trace.t, np.degrees(trace.alpha[:, wheel]), lw=0.8)
    ax2.axhline(1.0, color="gray", ls=":", lw=0.8)
    ax2.axhline(-1.0, color="gray", ls=":", lw=0.8)
    ax2.set_ylabel("slip angle [deg]")
    ax2.set_xlabel("time [s]")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    return _png(fig)


def latency_figure(latency: dict[str, LatencyProfile]) -> bytes:
    """Normalized per-update latency histograms, one bar series per estimator."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, lp in latency.items():
        centers = 0.5 * (lp.edges_us[1:] + lp.edges_us[:-1])
        ax.step(centers, lp.mass, where="mid", label=f"{name} (mean {lp.mean_us:.0f} us)")
    ax.set_xscale("symlog", linthresh=10.0)
    ax.set_xlabel("per-update latency [us]")
    ax.set_ylabel("fraction of updates")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _png(fig)


def error_histogram_figure(edges: np.ndarray, counts: np.ndarray) -> bytes:
    """Test-split prediction error histogram (counts normalized to fractions)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    total = max(int(np.sum(counts)), 1)
    ax.bar(edges[:-1], np.asarray(counts) / total, width=np.diff(edges), align="edge", edgecolor="k", lw=0.4)
    ax.set_xlabel("prediction error")
    ax.set_ylabel("fraction of test windows")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _png(fig)


def training_curve_figure(val_history: list[float]) -> bytes:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(val_history) + 1), val_history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation mse")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _png(fig)


def run_figures(trace: SimTrace, estimates: dict[str, dict[WheelId, EstimateTrace]],
                latency: dict[str, LatencyProfile]) -> dict[str, bytes]:
    """All figures of a run directory, keyed by file name."""
    wheels = sorted({w for per_wheel in estimates.values() for w in per_wheel})
    out = {f"fig_mu_{WHEEL_NAMES[w]}.png": estimate_figure(trace, estimates, w) for w in wheels}
    if latency:
        out["fig_latency.png"] = latency_figure(latency)
    return out
