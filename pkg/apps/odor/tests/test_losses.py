import itertools

import numpy as np
from django.test import SimpleTestCase

from odor.services.autodiff import Tape, Tensor, backward
from odor.services.exceptions import ConfigError
from odor.services.loss_service import (
    LossConfig,
    adaptive_loss,
    alpha1,
    auroc,
    bce,
    evaluate_scores,
    f1_macro,
    f1_samples,
    focal,
    l2_penalty,
)


def brute_force_auroc(scores, labels):
    positives = [s for s, y in zip(scores, labels) if y]
    negatives = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(positives, negatives))
    return wins / (len(positives) * len(negatives))


# (scores, labels, macro F1 at threshold 0.5) worked out by hand
F1_CASES = [
    ([[0.1], [0.2]], [[1], [0]], 0.0),
    ([[0.0, 0.0], [0.0, 0.0]], [[1, 0], [0, 1]], 0.0),
    ([[0.9, 0.1], [0.1, 0.9]], [[1, 0], [0, 1]], 1.0),
    ([[0.9, 0.9], [0.2, 0.8]], [[1, 1], [0, 1]], 1.0),
    ([[0.7]], [[1]], 1.0),
    ([[0.3]], [[1]], 0.0),
    ([[0.6, 0.6]], [[1, 0]], 1.0),
    ([[0.9, 0.9], [0.1, 0.9]], [[1, 0], [0, 0]], 1.0),
    ([[0.9], [0.1]], [[0], [0]], 0.0),
    ([[0.9], [0.9], [0.9], [0.9]], [[1], [0], [0], [1]], 2 / 3),
    ([[0.5], [0.49]], [[1], [1]], 2 / 3),
    ([[0.9], [0.1], [0.8]], [[1], [1], [0]], 0.5),
    ([[0.9, 0.1], [0.9, 0.9], [0.1, 0.9]], [[1, 0], [0, 1], [1, 1]], 0.75),
    ([[0.9, 0.1, 0.9], [0.1, 0.2, 0.9]], [[1, 1, 0], [0, 0, 0]], 0.5),
    ([[0.9], [0.8], [0.7], [0.2], [0.1]], [[1], [0], [1], [1], [0]], 2 / 3),
    ([[0.9], [0.1], [0.1], [0.1]], [[0], [1], [0], [0]], 0.0),
    ([[0.1], [0.9]], [[1], [0]], 0.0),
    ([[0.9, 0.9], [0.1, 0.9], [0.1, 0.9]], [[1, 1], [1, 1], [1, 1]], 0.75),
    ([[0.9], [0.9], [0.9], [0.9]], [[1], [1], [1], [0]], 6 / 7),
    ([[0.9, 0.9], [0.1, 0.9], [0.1, 0.9]], [[1, 1], [1, 0], [0, 0]], 7 / 12),
]


class LossConfigTest(SimpleTestCase):

    def test_defaults(self):
        config = LossConfig()
        self.assertEqual((config.alpha, config.gamma, config.l2_lambda), (0.5, 2.0, 1e-5))
        self.assertEqual(config.alpha1_schedule, (0.1, 0.9, None))

    def test_lambda_key_round_trip(self):
        config = LossConfig.from_dict({'lambda': 0.01, 'alpha1_schedule': [0.2, 0.8, 5]})
        self.assertEqual(config.l2_lambda, 0.01)
        self.assertEqual(config.alpha1_schedule, (0.2, 0.8, 5))
        self.assertEqual(LossConfig.from_dict(config.to_dict()), config)
        self.assertIn('lambda', config.to_dict())

    def test_invalid_values(self):
        for bad in ({'alpha': 0.0}, {'alpha': 1.5}, {'gamma': -1.0}, {'lambda': -1e-3},
                    {'alpha1_schedule': [0.9, 0.1, None]}, {'alpha1_schedule': [0.1, 1.2, None]},
                    {'alpha1_schedule': [0.1, 0.9]}, {'mode': 'hinge'}, {'beta': 1.0}):
            with self.subTest(config=bad):
                with self.assertRaises(ConfigError):
                    LossConfig.from_dict(bad)


class Alpha1ScheduleTest(SimpleTestCase):

    def test_ramp_over_training_run(self):
        config = LossConfig()
        self.assertAlmostEqual(alpha1(0, config, 100), 0.1)
        self.assertAlmostEqual(alpha1(50, config, 100), 0.5)
        self.assertAlmostEqual(alpha1(100, config, 100), 0.9)
        self.assertAlmostEqual(alpha1(250, config, 100), 0.9)

    def test_explicit_ramp_then_hold(self):
        config = LossConfig(alpha1_schedule=(0.0, 1.0, 10))
        self.assertAlmostEqual(alpha1(5, config, 100), 0.5)
        self.assertEqual(alpha1(10, config, 100), 1.0)
        self.assertEqual(alpha1(60, config, 100), 1.0)

    def test_nondecreasing(self):
        config = LossConfig()
        values = [alpha1(epoch, config, 40) for epoch in range(60)]
        self.assertTrue(all(b >= a for a, b in zip(values, values[1:])))
        self.assertTrue(all(0.1 <= v <= 0.9 for v in values))

    def test_no_ramp_length_holds_end(self):
        self.assertEqual(alpha1(0, LossConfig(), None), 0.9)
        self.assertEqual(alpha1(0, LossConfig(alpha1_schedule=(0.1, 0.9, 0)), 100), 0.9)


class LossValueTest(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(3)
        self.logits = Tensor(rng.normal(scale=3.0, size=(6, 4)))
        self.targets = rng.integers(0, 2, size=(6, 4)).astype(float)

    def test_bce_matches_direct_formula(self):
        x, y = self.logits.values, self.targets
        p = 1.0 / (1.0 + np.exp(-x))
        expected = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        np.testing.assert_allclose(bce(self.logits, y).values, expected, rtol=1e-10)

    def test_reference_values(self):
        zero = Tensor(np.zeros(1))
        self.assertAlmostEqual(bce(zero, np.ones(1)).item(), np.log(2.0), places=12)
        self.assertAlmostEqual(bce(zero, np.zeros(1)).item(), np.log(2.0), places=12)
        self.assertAlmostEqual(bce(Tensor([20.0]), np.ones(1)).item(), 2.06e-9, delta=1e-11)
        self.assertAlmostEqual(focal(zero, np.ones(1), 0.5, 2.0).item(), 0.086643, places=6)
        self.assertLess(focal(Tensor([30.0]), np.ones(1), 0.5, 2.0).item(), 1e-25)
        self.assertAlmostEqual(l2_penalty([Tensor([2.0])], 1e-5).item(), 4e-5)

    def test_focal_without_focusing_is_bce(self):
        np.testing.assert_allclose(
            focal(self.logits, self.targets, alpha=1.0, gamma=0.0).values,
            bce(self.logits, self.targets).values,
            rtol=0, atol=1e-15,
        )

    def test_focal_bounded_by_weighted_bce(self):
        for alpha, gamma in ((0.5, 2.0), (0.25, 1.0), (1.0, 5.0)):
            fl = focal(self.logits, self.targets, alpha, gamma).values
            ce = bce(self.logits, self.targets).values
            self.assertTrue(np.all(fl >= 0.0))
            self.assertTrue(np.all(fl <= alpha * ce * (1 + 1e-12)))

    def test_blend_endpoints(self):
        ce = bce(self.logits, self.targets).values.mean()
        fl = focal(self.logits, self.targets, 0.5, 2.0).values.mean()
        only_bce = LossConfig(alpha1_schedule=(0.0, 0.0, None))
        only_focal = LossConfig(alpha1_schedule=(1.0, 1.0, None))
        self.assertAlmostEqual(adaptive_loss(self.logits, self.targets, 3, only_bce, 10).item(), ce, places=12)
        self.assertAlmostEqual(adaptive_loss(self.logits, self.targets, 3, only_focal, 10).item(), fl, places=12)

    def test_blend_is_convex_combination(self):
        config = LossConfig()
        weight = alpha1(4, config, 10)
        ce = bce(self.logits, self.targets).values.mean()
        fl = focal(self.logits, self.targets, config.alpha, config.gamma).values.mean()
        value = adaptive_loss(self.logits, self.targets, 4, config, 10).item()
        self.assertAlmostEqual(value, weight * fl + (1 - weight) * ce, places=12)

    def test_fixed_modes(self):
        ce = bce(self.logits, self.targets).values.mean()
        self.assertAlmostEqual(adaptive_loss(self.logits, self.targets, 0, LossConfig(mode='bce')).item(), ce, places=12)
        fl = focal(self.logits, self.targets, 0.5, 2.0).values.mean()
        self.assertAlmostEqual(adaptive_loss(self.logits, self.targets, 0, LossConfig(mode='focal')).item(), fl, places=12)

    def test_finite_values_and_gradients_at_extreme_logits(self):
        logits = Tensor(np.array([[500.0, -500.0], [-500.0, 500.0]]), requires_grad=True)
        targets = np.array([[1.0, 0.0], [1.0, 0.0]])
        with Tape():
            loss = adaptive_loss(logits, targets, 0, LossConfig(), 10)
            backward(loss)
        self.assertTrue(np.isfinite(loss.item()))
        self.assertTrue(np.all(np.isfinite(logits.grad)))
        self.assertLess(logits.grad[1, 0], 0.0)
        self.assertGreater(logits.grad[1, 1], 0.0)

    def test_fractional_focusing_has_finite_gradients_when_saturated(self):
        logits = Tensor(np.array([[800.0, -800.0], [40.0, -40.0]]), requires_grad=True)
        targets = np.array([[1.0, 0.0], [1.0, 0.0]])
        for config in (LossConfig(mode='focal', gamma=0.5), LossConfig(gamma=0.25, alpha1_schedule=(1.0, 1.0, None))):
            with self.subTest(config=config):
                logits.zero_grad()
                with Tape():
                    loss = adaptive_loss(logits, targets, 0, config, 10)
                    backward(loss)
                self.assertTrue(np.isfinite(loss.item()))
                self.assertTrue(np.all(np.isfinite(logits.grad)))
                self.assertTrue(np.all(np.abs(logits.grad) < 1e-6))

    def test_l2_penalty(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([[3.0]]), requires_grad=True)
        self.assertAlmostEqual(l2_penalty([a, b], 0.1).item(), 1.4)
        self.assertEqual(l2_penalty([a], 0.0).item(), 0.0)


class AurocTest(SimpleTestCase):

    def test_matches_pair_counting_with_ties(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            n = int(rng.integers(2, 30))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 1)
            self.assertAlmostEqual(auroc(scores, labels), brute_force_auroc(scores, labels), places=12)

    def test_perfect_and_inverted(self):
        self.assertEqual(auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)
        self.assertEqual(auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]), 0.0)
        self.assertEqual(auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]), 0.5)

    def test_single_class_is_undefined(self):
        self.assertIsNone(auroc([0.1, 0.7], [1, 1]))
        self.assertIsNone(auroc([0.1, 0.7], [0, 0]))


class F1Test(SimpleTestCase):

    labels = np.array([[1, 0], [1, 1], [0, 1]])
    scores = np.array([[0.9, 0.2], [0.4, 0.7], [0.6, 0.5]])

    def test_macro_uses_inclusive_threshold(self):
        # label 0: tp 1, fp 1, fn 1; label 1: tp 2 with the 0.5 score counted positive
        self.assertAlmostEqual(f1_macro(self.scores, self.labels, 0.5), 0.75)

    def test_macro_skips_labels_without_positives(self):
        labels = np.hstack([self.labels, np.zeros((3, 1), dtype=int)])
        scores = np.hstack([self.scores, np.full((3, 1), 0.9)])
        self.assertAlmostEqual(f1_macro(scores, labels, 0.5), 0.75)
        self.assertEqual(f1_macro(np.ones((2, 2)), np.zeros((2, 2)), 0.5), 0.0)

    def test_macro_matches_worked_cases(self):
        for scores, labels, expected in F1_CASES:
            with self.subTest(scores=scores, labels=labels):
                self.assertAlmostEqual(f1_macro(np.array(scores), np.array(labels), 0.5), expected, places=12)

    def test_samples_average(self):
        predictions = (self.scores >= 0.5).astype(int)
        self.assertAlmostEqual(f1_samples(self.labels, predictions), (1 + 2 / 3 + 2 / 3) / 3)

    def test_single_label_column(self):
        labels = np.array([[1], [0], [1], [0]])
        scores = np.array([[0.8], [0.7], [0.3], [0.1]])
        self.assertAlmostEqual(f1_macro(scores, labels, 0.5), 0.5)


class EvaluateScoresTest(SimpleTestCase):

    def test_report(self):
        labels = np.array([[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 0]])
        scores = np.array([[0.9, 0.1, 0.2], [0.2, 0.8, 0.1], [0.7, 0.6, 0.3], [0.1, 0.3, 0.6]])
        report = evaluate_scores(scores, labels, ['fruity', 'green', 'musk'])
        self.assertEqual(report.per_label_auroc, {'fruity': 1.0, 'green': 1.0})
        self.assertEqual(report.mean_auroc, 1.0)
        self.assertEqual(report.skipped_labels, ['musk'])
        self.assertEqual(report.support, {'fruity': 2, 'green': 2, 'musk': 0})
        self.assertEqual(report.macro_f1, 1.0)
        self.assertAlmostEqual(report.micro_f1, 8 / 9)
        self.assertEqual(report.num_molecules, 4)
        self.assertEqual(set(report.to_dict()), {
            'per_label_auroc', 'mean_auroc', 'macro_f1', 'micro_f1',
            'samples_f1', 'support', 'skipped_labels', 'num_molecules',
        })

    def test_all_labels_skipped(self):
        report = evaluate_scores(np.full((2, 1), 0.4), np.ones((2, 1)), ['sweet'])
        self.assertIsNone(report.mean_auroc)
        self.assertEqual(report.skipped_labels, ['sweet'])
