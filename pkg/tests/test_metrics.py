import math

import numpy as np
import pytest

from trfc.errors import ConfigurationError
from trfc.metrics import (EstimateTrace, LatencyProfile, convergence_times, latency_profile, plateau_bias,
                          read_estimates_csv, rms_error, rms_error_all, write_estimates_csv)
from trfc.vehicle import SimTrace, WheelId


def make_truth(mu_fl, rate=100.0):
    n = len(mu_fl)
    t = np.arange(n) / rate
    mu = np.column_stack([mu_fl, mu_fl, mu_fl, mu_fl])
    z = np.zeros(n)
    zw = np.zeros((n, 4))
    return SimTrace(t=t, u=z + 10, v=z, r=z, ay=z, alpha=zw, fy=zw, fz=zw + 3000, mu_true=mu, delta=zw)


def make_est(mu_hat, active=None, wheel=WheelId.FL):
    n = len(mu_hat)
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active)
    return EstimateTrace(wheel, np.arange(n) / 100.0, np.arange(n), np.asarray(mu_hat, dtype=float), active,
                         np.zeros(n, dtype=int), np.zeros(n))


class TestRms:
    def test_perfect_is_zero(self):
        mu = np.full(200, 0.8)
        assert rms_error(make_est(mu), make_truth(mu)) == 0.0

    def test_constant_offset(self):
        mu = np.full(200, 0.8)
        assert rms_error(make_est(mu + 0.05), make_truth(mu)) == pytest.approx(0.05, abs=1e-12)

    def test_inactive_samples_excluded(self):
        mu = np.full(200, 0.8)
        est = mu.copy()
        est[:100] = 0.5
        active = np.arange(200) >= 100
        assert rms_error(make_est(est, active), make_truth(mu)) == 0.0
        assert rms_error_all(make_est(est, active), make_truth(mu)) == pytest.approx(math.sqrt(0.09 / 2))

    def test_no_active_samples_is_undefined(self):
        mu = np.full(50, 0.8)
        assert math.isnan(rms_error(make_est(mu, np.zeros(50, dtype=bool)), make_truth(mu)))

    def test_wrong_wheel_rejected(self):
        mu = np.full(50, 0.8)
        with pytest.raises(ValueError):
            rms_error(make_est(mu), make_truth(mu), wheel="fr")

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        mu = np.full(300, 0.7)
        assert rms_error(make_est(mu + rng.normal(0, 0.1, 300)), make_truth(mu)) >= 0


class TestConvergence:
    def test_enter_and_stay(self):
        mu = np.r_[np.full(500, 1.0), np.full(500, 0.6)]
        est = mu.copy()
        est[500:700] = 1.0  # lags 2 s behind the step
        est[650] = 0.62  # brief entry does not count
        times = convergence_times(make_est(est), make_truth(mu))
        assert times == [(5.0, pytest.approx(2.0))]

    def test_never_converges_is_inf(self):
        mu = np.r_[np.full(300, 1.0), np.full(300, 0.6)]
        est = np.full(600, 1.0)
        assert convergence_times(make_est(est), make_truth(mu)) == [(3.0, math.inf)]

    def test_late_excursion_resets(self):
        mu = np.r_[np.full(300, 1.0), np.full(300, 0.6)]
        est = mu.copy()
        est[550] = 0.7
        assert convergence_times(make_est(est), make_truth(mu))[0][1] == pytest.approx(2.51)

    def test_one_entry_per_step(self):
        mu = np.r_[np.full(100, 1.0), np.full(100, 0.7), np.full(100, 0.9)]
        out = convergence_times(make_est(mu), make_truth(mu))
        assert [t for t, _ in out] == [1.0, 2.0] and all(d == 0.0 for _, d in out)

    def test_no_steps(self):
        mu = np.full(100, 0.8)
        assert convergence_times(make_est(mu), make_truth(mu)) == []


def test_plateau_bias_sign():
    mu = np.full(1000, 0.8)
    assert plateau_bias(make_est(mu - 0.1), make_truth(mu), 0.0, 10.0) == pytest.approx(-0.1)


def test_estimates_csv_round_trip(tmp_path):
    mu = np.linspace(0.5, 0.9, 120)
    a = make_est(mu, np.arange(120) > 10)
    b = make_est(mu[::-1], wheel=WheelId.FR)
    path = tmp_path / "est.csv"
    text = write_estimates_csv([a, b], path)
    assert text.splitlines()[0] == "t,wheel,mu_hat,active,iters,solve_time_us"
    back = read_estimates_csv(path)
    assert set(back) == {WheelId.FL, WheelId.FR}
    np.testing.assert_allclose(back[WheelId.FL].mu_hat, a.mu_hat, rtol=1e-11)
    np.testing.assert_array_equal(back[WheelId.FL].active, a.active)
    np.testing.assert_array_equal(back[WheelId.FR].step, b.step)


def test_estimates_csv_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    with pytest.raises(ConfigurationError):
        read_estimates_csv(p)
    with pytest.raises(ConfigurationError):
        read_estimates_csv(tmp_path / "missing.csv")


class TestLatency:
    def test_histogram_normalized(self):
        rng = np.random.default_rng(1)
        lp = LatencyProfile.from_samples(rng.lognormal(3, 0.5, 20_000))
        assert lp.mass.sum() == pytest.approx(1.0, abs=1e-9)
        assert lp.p50_us <= lp.p99_us
        assert lp.mean_us > 0

    def test_profile_counts_updates(self):
        calls = []
        lp = latency_profile(calls.append, ["w1", "w2"], min_updates=10_000, warmup=5)
        assert len(calls) == 10_005
        assert len(lp.samples_us) == 10_000 and (lp.samples_us > 0).all()
        assert lp.mass.sum() == pytest.approx(1.0, abs=1e-9)

    def test_csv(self):
        lp = LatencyProfile.from_samples([1.0, 2.0, 3.0], bins=3)
        lines = lp.to_csv().splitlines()
        assert lines[0] == "bin_lo_us,bin_hi_us,mass" and len(lines) == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            LatencyProfile.from_samples([])
        with pytest.raises(ValueError):
            latency_profile(lambda w: None, [])
