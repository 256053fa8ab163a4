"""Windowed nonlinear least-squares friction estimator.

The friction coefficient is the single decision variable. For the samples
``k`` of an observation window the residual is the model's normalized force
minus the measured one::

    r_k(mu) = F(alpha_k, mu, Fz_k) / Fz_k - (Fy/Fz)_k

and ``mu`` minimizes ``sum r_k^2``, solved with a damped Gauss-Newton
(Levenberg-Marquardt) iteration on a forward-difference Jacobian.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from trfc.errors import ConfigurationError, DomainError, SolverFault
from trfc.signals import ObservationWindow
from trfc.tire_models import CorneringStiffness, TireModelKind, TireParams, lateral_force

FD_STEP = 1e-6
MIN_STEP = 1e-6


@dataclass(frozen=True)
class NlsConfig:
    model: TireModelKind = TireModelKind.DUGOFF
    alpha_threshold_rad: float = math.radians(1.0)
    mu_initial: float = 0.5
    mu_bounds: tuple[float, float] = (0.05, 1.5)
    max_iterations: int = 50
    residual_tolerance: float = 1e-12
    lm_damping_initial: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "model", TireModelKind.parse(self.model))
        if not self.alpha_threshold_rad > 0:
            raise ConfigurationError("alpha threshold must be positive")
        if not 0 < self.mu_initial < 2:
            raise ConfigurationError("initial friction must lie in (0, 2)")
        lo, hi = self.mu_bounds
        if not 0 < lo < hi:
            raise ConfigurationError("friction bounds must satisfy 0 < lo < hi")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if not self.lm_damping_initial > 0:
            raise ConfigurationError("initial damping must be positive")


@dataclass(frozen=True)
class LmResult:
    x: float
    iterations: int
    converged: bool
    cost: float


def levenberg_marquardt(residual_fn: Callable[[float], np.ndarray], x0: float, cfg: NlsConfig = NlsConfig()) -> LmResult:
    """Minimize ``||residual_fn(x)||^2`` over a scalar ``x``.

    Steps are only accepted when they lower the cost. A trial point where the
    residual function raises :class:`DomainError` counts as a rejected step.
    Non-finite residuals raise :class:`SolverFault`.
    """

    def evaluate(x):
        r = np.asarray(residual_fn(x), dtype=np.float64)
        if not np.isfinite(r).all():
            raise SolverFault(f"non-finite residual at x={x!r}")
        return r

    x = float(x0)
    r = evaluate(x)
    cost = float(r @ r)
    lam = cfg.lm_damping_initial
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        try:
            r_h = evaluate(x + FD_STEP)
            jac = (r_h - r) / FD_STEP
        except DomainError:
            r_h = evaluate(x - FD_STEP)
            jac = (r - r_h) / FD_STEP
        grad = float(jac @ r)
        hess = float(jac @ jac)
        if hess == 0.0 or grad == 0.0:
            converged = True
            break
        accepted = False
        while lam < 1e12:
            dx = -grad / (hess * (1.0 + lam))
            try:
                r_new = evaluate(x + dx)
            except DomainError:
                lam *= 10.0
                continue
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        x, r = x + dx, r_new
        drop = cost - cost_new
        cost = cost_new
        lam = max(lam / 10.0, 1e-12)
        if abs(dx) < MIN_STEP or drop < cfg.residual_tolerance:
            converged = True
            break
    return LmResult(x, it, converged, cost)


def residuals(mu: float, window: ObservationWindow, model: TireModelKind, params: TireParams,
              fz_series: np.ndarray | None = None) -> np.ndarray:
    """Normalized-force residual vector over a full window."""
    if not window.full:
        raise ValueError("window is not full")
    fz = window.fz if fz_series is None else np.asarray(fz_series, dtype=np.float64)
    return _residuals(mu, window.alpha, window.fy_over_fz, fz, model, params)


def _residuals(mu, alpha, ratio, fz, model, params):
    return np.asarray(lateral_force(model, alpha, mu, fz, params)) / fz - ratio


@dataclass(frozen=True)
class EstimateStep:
    mu_hat: float
    active: bool
    iterations: int
    fault: bool = False
    solve_time_us: float = 0.0


class NlsEstimator:
    """One wheel's NLS estimator: gating, warm start and clamping."""

    name = "nls"

    def __init__(self, cfg: NlsConfig = NlsConfig(), cornering: CorneringStiffness | TireParams = CorneringStiffness()):
        self.cfg = cfg
        self.params = cornering
        self.mu_hat = cfg.mu_initial
        self.total_iterations = 0

    def update(self, window: ObservationWindow, fz_series: np.ndarray | None = None) -> EstimateStep:
        cfg = self.cfg
        if not window.full or window.max_abs_alpha() < cfg.alpha_threshold_rad:
            return EstimateStep(self.mu_hat, False, 0)
        alpha, ratio = window.alpha, window.fy_over_fz
        fz = window.fz if fz_series is None else np.asarray(fz_series, dtype=np.float64)
        fn = lambda mu: _residuals(mu, alpha, ratio, fz, cfg.model, self.params)  # noqa: E731
        try:
            result = levenberg_marquardt(fn, self.mu_hat, cfg)
        except (SolverFault, DomainError):
            return EstimateStep(self.mu_hat, True, 0, fault=True)
        self.total_iterations += result.iterations
        lo, hi = cfg.mu_bounds
        self.mu_hat = min(max(result.x, lo), hi)
        return EstimateStep(self.mu_hat, True, result.iterations)


def update(estimator: NlsEstimator, window: ObservationWindow, fz_series: np.ndarray | None = None) -> EstimateStep:
    return estimator.update(window, fz_series)


def timed_update(estimator, window: ObservationWindow) -> EstimateStep:
    """Run ``estimator.update`` and attach its wall-clock duration."""
    start = time.perf_counter_ns()
    out = estimator.update(window)
    elapsed = (time.perf_counter_ns() - start) / 1000.0
    return EstimateStep(out.mu_hat, out.active, out.iterations, out.fault, elapsed)
