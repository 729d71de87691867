import numpy as np
import pytest

from metatrace.probe import (
    ProbeConfig,
    ProbeError,
    evaluate_probe,
    random_baseline,
    train_probe,
)


def gaussian_classes(rng, n_per_class, d, centers, sigma=0.3):
    X, y = [], []
    for c, center in enumerate(centers):
        X.append(center + sigma * rng.standard_normal((n_per_class, d)))
        y += [c] * n_per_class
    return np.vstack(X).astype(np.float32), np.array(y)


FAST = ProbeConfig(trials=6, epochs=30, batch_size=64, seed=0)


class TestTrainProbe:
    def test_separable_fixture(self, rng):
        centers = np.eye(8)[:2] * 2.0
        X, y = gaussian_classes(rng, 200, 8, centers)
        model = train_probe(X, y, FAST)
        assert evaluate_probe(model, X, y) >= 0.99

    def test_permuted_labels_near_chance(self, rng):
        X = rng.standard_normal((6000, 32)).astype(np.float32)
        y = rng.integers(0, 6, size=6000)
        X_test = rng.standard_normal((1200, 32)).astype(np.float32)
        y_test = rng.integers(0, 6, size=1200)
        cfg = ProbeConfig(trials=3, epochs=15, batch_size=256, seed=0)
        model = train_probe(X, y, cfg)
        acc = evaluate_probe(model, X_test, y_test)
        assert abs(acc - 1 / 6) <= 0.03

    def test_deterministic(self, rng):
        X, y = gaussian_classes(rng, 50, 6, np.eye(6)[:3])
        a = train_probe(X, y, FAST)
        b = train_probe(X, y, FAST)
        assert a.chosen_lr == b.chosen_lr and a.chosen_wd == b.chosen_wd
        assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)

    def test_single_class_rejected(self, rng):
        X = rng.standard_normal((20, 4)).astype(np.float32)
        with pytest.raises(ProbeError):
            train_probe(X, np.zeros(20, dtype=int), FAST)

    def test_chosen_hp_is_validation_argmax(self, rng):
        X, y = gaussian_classes(rng, 60, 6, np.eye(6)[:3], sigma=1.0)
        model = train_probe(X, y, FAST)
        best = max(model.trial_log, key=lambda t: (t.val_accuracy, -t.index))
        assert (model.chosen_lr, model.chosen_wd) == (best.lr, best.wd)

    def test_planted_linear_trace_detected(self, rng):
        # unit-norm noise plus class offsets of norm 0.5 must be readable
        d, M = 64, 4
        offsets = 0.5 * np.eye(d)[:M]
        def build(n):
            y = rng.integers(0, M, size=n)
            noise = rng.standard_normal((n, d))
            noise /= np.linalg.norm(noise, axis=1, keepdims=True)
            return (noise + offsets[y]).astype(np.float32), y
        X, y = build(1500)
        X_test, y_test = build(400)
        model = train_probe(X, y, ProbeConfig(trials=8, epochs=40, seed=1))
        assert evaluate_probe(model, X_test, y_test) >= 0.95


class TestEvaluateProbe:
    def test_constant_predictor(self, rng):
        X, y = gaussian_classes(rng, 30, 4, np.eye(4)[:3])
        model = train_probe(X, y, FAST)
        biased = type(model)(
            W=np.zeros_like(model.W),
            b=np.array([0.0, 5.0, 0.0]),
            chosen_lr=model.chosen_lr,
            chosen_wd=model.chosen_wd,
            seed=0,
            normalize_inputs=model.normalize_inputs,
        )
        acc = evaluate_probe(biased, X, y)
        assert acc == pytest.approx(np.mean(y == 1))

    def test_empty_test_rejected(self, rng):
        X, y = gaussian_classes(rng, 30, 4, np.eye(4)[:2])
        model = train_probe(X, y, FAST)
        with pytest.raises(ProbeError):
            evaluate_probe(model, np.zeros((0, 4), dtype=np.float32), np.zeros(0, dtype=int))

    def test_dim_mismatch_rejected(self, rng):
        X, y = gaussian_classes(rng, 30, 4, np.eye(4)[:2])
        model = train_probe(X, y, FAST)
        with pytest.raises(ProbeError):
            evaluate_probe(model, np.zeros((5, 9), dtype=np.float32), np.zeros(5, dtype=int))


class TestRandomBaseline:
    @pytest.mark.parametrize("M,expected", [(6, 1 / 6), (4, 0.25), (2, 0.5), (1, 1.0)])
    def test_values(self, M, expected):
        assert random_baseline(M) == pytest.approx(expected)

    def test_invalid(self):
        with pytest.raises(ProbeError):
            random_baseline(0)
