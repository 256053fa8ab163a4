import math

import numpy as np
import pytest

from trfc.errors import ConfigurationError
from trfc.signals import FeatureSample, ObservationWindow
from trfc.tdnn import (MU_CLAMP, Optimizer, TdnnEstimator, TdnnModel, TrainConfig, error_histogram, fit_scaling,
                       forward, gradients, load_model, model_from_bytes, model_to_bytes, save_model, train, update)

X_RANGE = (-0.12, 0.12, -1.3, 1.3)
Y_RANGE = (0.3, 1.2)


def random_model(taps=5, hidden=3, seed=0):
    rng = np.random.default_rng(seed)
    m = TdnnModel.initialize(taps, hidden, X_RANGE, Y_RANGE, rng)
    m.b1 = rng.normal(0, 0.3, hidden)
    m.b2 = 0.1
    return m


def window_from(x, taps):
    w = ObservationWindow(capacity=taps)
    for k in range(taps):
        w.push(FeatureSample(k * 0.01, float(x[k]), float(x[taps + k]), 3000.0))
    return w


def synthetic_problem(n=800, taps=5, seed=0):
    """Windows whose normalized force is -0.9 mu tanh(alpha / 0.03), mu uniform on [0.3, 1.2]."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.3, 1.2, n)
    alpha = rng.uniform(0.02, 0.1, (n, 1)) * np.ones((1, taps)) + rng.normal(0, 0.002, (n, taps))
    ratio = -0.9 * mu[:, None] * np.tanh(alpha / 0.03)
    x = np.hstack((alpha, ratio))
    split = rng.choice(3, n, p=(0.7, 0.15, 0.15))
    return x, mu, split


class TestGradient:
    def test_matches_central_differences(self):
        m = random_model()
        rng = np.random.default_rng(3)
        xs = rng.uniform(-1, 1, (40, 10))
        ys = rng.uniform(-1, 1, 40)
        _, g = gradients(m, xs, ys)
        theta = m.get_params()
        num = np.empty_like(theta)
        h = 1e-6
        for i in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            m.set_params(tp)
            lp, _ = gradients(m, xs, ys)
            m.set_params(tm)
            lm, _ = gradients(m, xs, ys)
            num[i] = (lp - lm) / (2 * h)
        m.set_params(theta)
        rel = np.abs(g - num) / np.maximum(np.abs(num), 1e-8)
        assert np.all((rel < 1e-5) | (np.abs(g - num) < 1e-10))

    def test_param_vector_round_trip(self):
        m = random_model()
        theta = m.get_params()
        assert theta.size == 3 * 10 + 3 + 3 + 1
        m2 = m.copy()
        m2.set_params(theta * 2)
        m2.set_params(theta)
        np.testing.assert_array_equal(m2.get_params(), theta)


class TestForward:
    def test_zero_weights_give_unscaled_bias(self):
        m = TdnnModel(np.zeros((3, 10)), np.zeros(3), np.zeros(3), 0.2, X_RANGE, Y_RANGE)
        x = np.random.default_rng(0).uniform(-0.1, 0.1, 10)
        assert forward(m, window_from(x, 5)) == pytest.approx(float(m.unscale_y(0.2)))

    def test_deterministic_and_pure(self):
        m = random_model()
        x = np.linspace(-0.1, 0.1, 10)
        w = window_from(x, 5)
        before = m.get_params()
        assert forward(m, w) == forward(m, w)
        np.testing.assert_array_equal(m.get_params(), before)

    def test_output_clamped(self):
        m = TdnnModel(np.zeros((3, 10)), np.zeros(3), np.zeros(3), 50.0, X_RANGE, Y_RANGE)
        assert forward(m, window_from(np.zeros(10), 5)) == MU_CLAMP[1]
        m.b2 = -50.0
        assert forward(m, window_from(np.zeros(10), 5)) == MU_CLAMP[0]

    def test_window_checks(self):
        m = random_model()
        partial = ObservationWindow(capacity=5)
        partial.push(FeatureSample(0.0, 0.1, 0.1, 3000.0))
        with pytest.raises(ValueError):
            forward(m, partial)
        with pytest.raises(ConfigurationError):
            forward(m, window_from(np.zeros(12), 6))

    @pytest.mark.parametrize("seed", range(5))
    def test_scaling_round_trip(self, seed):
        m = random_model()
        lo = np.r_[np.full(5, X_RANGE[0]), np.full(5, X_RANGE[2])]
        hi = np.r_[np.full(5, X_RANGE[1]), np.full(5, X_RANGE[3])]
        x = np.random.default_rng(seed).uniform(lo, hi)
        np.testing.assert_allclose(m.unscale_x(m.scale_x(x)), x, rtol=0, atol=1e-12)
        y = np.random.default_rng(seed).uniform(*Y_RANGE, 20)
        np.testing.assert_allclose(m.unscale_y(m.scale_y(y)), y, rtol=0, atol=1e-12)
        assert m.scale_x(lo) == pytest.approx(-1.0) and m.scale_x(hi) == pytest.approx(1.0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        m = random_model(taps=7, hidden=4)
        path = tmp_path / "m.bin"
        save_model(m, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.get_params(), m.get_params())
        assert back.x_range == m.x_range and back.y_range == m.y_range
        assert model_to_bytes(back) == path.read_bytes()

    def test_layout(self):
        data = model_to_bytes(random_model(taps=5, hidden=3))
        assert data[:8] == b"TRFCTDNN"
        assert len(data) == 8 + 5 * 4 + 8 * (6 + 3 * 10 + 3 + 3 + 1)

    @pytest.mark.parametrize("mutate", [lambda d: b"XXXXXXXX" + d[8:], lambda d: d[:-8], lambda d: d + b"\0" * 8,
                                        lambda d: d[:8] + (7).to_bytes(4, "little") + d[12:]])
    def test_corrupt_rejected(self, mutate):
        with pytest.raises(ConfigurationError):
            model_from_bytes(mutate(model_to_bytes(random_model())))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_model(tmp_path / "nope.bin")


class TestTraining:
    def test_seeded_reproducible(self):
        x, y, split = synthetic_problem()
        cfg = TrainConfig(max_epochs=15, hidden=4, seed=7, batch_size=64)
        m1, r1 = train(x, y, split, cfg)
        m2, r2 = train(x, y, split, cfg)
        np.testing.assert_array_equal(m1.get_params(), m2.get_params())
        assert r1.val_history == r2.val_history

    def test_adam_learns(self):
        x, y, split = synthetic_problem()
        model, rep = train(x, y, split, TrainConfig(max_epochs=150, hidden=6, batch_size=32, learning_rate=1e-2))
        assert rep.splits["test"].r > 0.95
        assert rep.splits["test"].mse < 0.01
        assert rep.optimizer == "adam" and not rep.diverged
        assert rep.histogram_counts.sum() == len(y)
        assert min(rep.val_history) == pytest.approx(rep.val_history[rep.best_epoch - 1])

    def test_lm_mode(self):
        x, y, split = synthetic_problem(n=300)
        model, rep = train(x, y, split, TrainConfig(max_epochs=30, hidden=4, optimizer="lm"))
        assert rep.optimizer == "lm"
        assert rep.splits["train"].mse < 0.005
        assert rep.splits["test"].r > 0.95

    def test_returns_best_validation_weights(self):
        x, y, split = synthetic_problem()
        model, rep = train(x, y, split, TrainConfig(max_epochs=40, hidden=4, patience=3, learning_rate=0.05))
        va = split == 1
        best = float(np.mean((model.predict(x[va]) - y[va]) ** 2))
        assert best <= min(rep.val_history) + 1e-12

    def test_inconsistent_inputs(self):
        x, y, split = synthetic_problem()
        with pytest.raises(ConfigurationError):
            train(x[:, :9], y, split)
        with pytest.raises(ConfigurationError):
            train(x, y, np.zeros_like(split))

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(max_epochs=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=-1)
        assert TrainConfig(optimizer="levenberg_marquardt_batch").optimizer is Optimizer.LEVENBERG_MARQUARDT


def test_fit_scaling_per_channel():
    x, y, _ = synthetic_problem(taps=5)
    x_range, y_range = fit_scaling(x, y, 5)
    assert x_range[0] == x[:, :5].min() and x_range[3] == x[:, 5:].max()
    assert y_range == (y.min(), y.max())
    with pytest.raises(ConfigurationError):
        fit_scaling(x, np.full(len(y), 0.5), 5)


def test_error_histogram_keeps_outliers():
    edges, counts = error_histogram(np.array([-2.0, 0.0, 0.01, 3.0]), bins=4, limit=0.5)
    assert counts.sum() == 4 and counts[0] == 1 and counts[-1] == 1
    assert len(edges) == 5


class TestEstimator:
    def test_gating_holds_initial_value(self):
        est = TdnnEstimator(random_model())
        flat = window_from(np.r_[np.full(5, math.radians(0.5)), np.zeros(5)], 5)
        out = update(est, flat)
        assert out.mu_hat == 0.5 and not out.active

    def test_partial_window_holds(self):
        est = TdnnEstimator(random_model())
        w = ObservationWindow(capacity=5)
        w.push(FeatureSample(0.0, 0.1, -0.5, 3000.0))
        assert est.update(w).mu_hat == 0.5

    def test_active_matches_forward(self):
        m = random_model()
        est = TdnnEstimator(m)
        x = np.r_[np.full(5, 0.05), np.full(5, -0.6)]
        out = est.update(window_from(x, 5))
        assert out.active and out.mu_hat == forward(m, window_from(x, 5))
        assert MU_CLAMP[0] <= out.mu_hat <= MU_CLAMP[1]
