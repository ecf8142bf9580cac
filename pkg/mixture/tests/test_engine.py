from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from numpy.linalg import LinAlgError
from scipy.special import logsumexp

from mixture import engine
from mixture.engine import (
    EngineConfig,
    effective_sample_size,
    ensemble_mixture,
    ensemble_predict,
    init_ensemble,
    resample,
    score,
    step,
    systematic_resample,
)
from mixture.exceptions import InputError, NumericalError, StateError
from mixture.kernel_gp import GPDataView, KernelHyperparams, OptimizerConfig, optimize_hyperparams
from mixture.streams import particle_stream


def stream(seed, n=60, blocks=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, size=(n, 1))
    y = np.where(x[:, 0] < 5, np.sin(0.6 * np.pi * x[:, 0]), np.sin(4 * np.pi * x[:, 0]))
    y = y + 0.2 * rng.standard_normal(n)
    return [(x[chunk], y[chunk]) for chunk in np.array_split(np.arange(n), blocks)]


def fast_config(**overrides):
    values = {'particles': 4, 'alpha': 1.0, 'optimizer': OptimizerConfig(max_iters=15)}
    values.update(overrides)
    return EngineConfig(**values)


def run(batches, config, seed=0):
    ens = init_ensemble(batches[0], config, master_seed=seed)
    reports = [ens.last_report]
    for batch in batches[1:]:
        reports.append(step(ens, batch))
    return ens, reports


class EngineConfigTests(SimpleTestCase):
    def test_validation(self):
        for bad in ({'particles': 0}, {'alpha': 0.0}, {'minibatch': -1}, {'resample_threshold': 1.5}, {'threads': 0}):
            with self.subTest(bad=bad), self.assertRaises(InputError):
                EngineConfig(**bad)


class EffectiveSampleSizeTests(SimpleTestCase):
    def test_uniform_weights(self):
        self.assertAlmostEqual(effective_sample_size(np.full(8, -np.log(8))), 8.0)

    def test_degenerate_weights(self):
        self.assertAlmostEqual(effective_sample_size([0.0, -np.inf, -np.inf]), 1.0)

    def test_unnormalized_input(self):
        self.assertAlmostEqual(effective_sample_size(np.log([2.0, 2.0])), 2.0)
        self.assertAlmostEqual(effective_sample_size(np.log([0.5, 0.25, 0.25])), 1 / 0.375)


class SystematicResampleTests(SimpleTestCase):
    def test_uniform_weights_keep_everyone(self):
        indices = systematic_resample(np.full(5, 0.2), np.random.default_rng(0))
        np.testing.assert_array_equal(indices, np.arange(5))

    def test_unbiased_counts(self):
        weights = np.array([0.05, 0.15, 0.3, 0.5])
        rng = np.random.default_rng(1)
        trials = 10_000
        counts = np.zeros((trials, 4))
        for trial in range(trials):
            counts[trial] = np.bincount(systematic_resample(weights, rng), minlength=4)
        mean = counts.mean(axis=0)
        se = counts.std(axis=0) / np.sqrt(trials)
        expected = 4 * weights
        self.assertTrue(np.all(np.abs(mean - expected) <= 3 * se + 1e-12))

    def test_zero_weight_never_drawn(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            self.assertNotIn(1, systematic_resample(np.array([0.5, 0.0, 0.5]), rng))


class EnsembleLifecycleTests(SimpleTestCase):
    def setUp(self):
        self.batches = stream(0)

    def test_weights_stay_normalized(self):
        ens, reports = run(self.batches, fast_config())
        self.assertAlmostEqual(float(logsumexp(ens.log_weights)), 0.0, delta=1e-9)
        for report in reports:
            self.assertGreaterEqual(report.ess, 1.0 - 1e-12)
            self.assertLessEqual(report.ess, ens.size + 1e-12)
        self.assertEqual(ens.step_counter, 3)
        self.assertEqual([r.step for r in reports], [0, 1, 2])

    def test_init_does_not_resample(self):
        ens = init_ensemble(self.batches[0], fast_config(resample_threshold=1.0))
        self.assertFalse(ens.last_report.resampled)

    def test_threshold_one_resamples_every_uneven_step(self):
        _, reports = run(self.batches, fast_config(resample_threshold=1.0))
        for report in reports[1:]:
            self.assertEqual(report.resampled, report.ess < 4)

    def test_init_weight_is_sum_of_cached_likelihoods(self):
        ens = init_ensemble(self.batches[0], fast_config(particles=1))
        particle = ens.particles[0]
        self.assertEqual(particle.lml_total, sum(e.cached_lml for e in particle.experts.values()))
        self.assertEqual(particle.log_weight, 0.0)

    def test_step_before_init(self):
        ens = init_ensemble(self.batches[0], fast_config())
        ens.step_counter = 0
        with self.assertRaises(StateError):
            step(ens, self.batches[1])

    def test_bad_batches(self):
        ens = init_ensemble(self.batches[0], fast_config())
        with self.assertRaises(InputError):
            step(ens, (np.empty((0, 1)), []))
        with self.assertRaises(InputError):
            step(ens, (np.zeros((2, 2)), np.zeros(2)))
        with self.assertRaises(InputError):
            init_ensemble((np.empty((0, 1)), []), fast_config())

    def test_deterministic_for_a_seed(self):
        first, first_reports = run(self.batches, fast_config(), seed=5)
        second, second_reports = run(self.batches, fast_config(), seed=5)
        self.assertEqual(first_reports, second_reports)
        np.testing.assert_array_equal(first.log_weights, second.log_weights)

    def test_thread_count_does_not_change_results(self):
        serial, serial_reports = run(self.batches, fast_config(threads=1), seed=3)
        threaded, threaded_reports = run(self.batches, fast_config(threads=4), seed=3)
        self.assertEqual(serial_reports, threaded_reports)
        Xtest = np.linspace(0, 10, 11)[:, None]
        np.testing.assert_array_equal(ensemble_predict(serial, Xtest).mean, ensemble_predict(threaded, Xtest).mean)

    def test_resample_gives_uniform_weights(self):
        ens, _ = run(self.batches, fast_config())
        resample(ens)
        np.testing.assert_allclose(ens.weights, 0.25)
        self.assertEqual(len({id(p) for p in ens.particles}), 4)

    def test_single_particle_keeps_unit_weight(self):
        batches = stream(14, n=80, blocks=5)
        ens, reports = run(batches, fast_config(particles=1, resample_threshold=1.0))
        self.assertEqual(ens.weights.tolist(), [1.0])
        self.assertEqual([r.resampled for r in reports], [False] * 5)
        self.assertEqual([r.ess for r in reports], [1.0] * 5)

    def test_identical_partitions_share_the_weight(self):
        def shared(seed, step_index, index):
            return particle_stream(seed, step_index, 0)

        with mock.patch('mixture.engine.particle_stream', side_effect=shared):
            ens = init_ensemble(self.batches[0], fast_config(particles=2), master_seed=4)
        self.assertEqual(ens.particles[0].assignment_log, ens.particles[1].assignment_log)
        np.testing.assert_allclose(ens.weights, [0.5, 0.5], atol=1e-12)


class SingleParticleTests(SimpleTestCase):
    def test_matches_a_local_gp_fit(self):
        x = np.linspace(0, 5, 25)[:, None]
        y = np.sin(x[:, 0])
        # Tiny alpha forces a single cluster: the J=1 path is a plain GP fit.
        ens = init_ensemble((x, y), EngineConfig(particles=1, alpha=1e-300), master_seed=0)
        expert = ens.particles[0].experts[0]
        view = GPDataView(x, y)
        start = KernelHyperparams.default_for(x, y)
        theta, value = optimize_hyperparams(view, start, OptimizerConfig())
        self.assertEqual(expert.theta, theta)
        self.assertEqual(expert.cached_lml, value)

    def test_blocks_telescope_to_single_batch(self):
        x = np.linspace(0, 5, 30)[:, None]
        y = np.cos(x[:, 0]) + 0.1 * np.random.default_rng(0).standard_normal(30)
        config = EngineConfig(particles=1, alpha=1e-300)
        whole = init_ensemble((x, y), config)
        parts = init_ensemble((x[:10], y[:10]), config)
        step(parts, (x[10:20], y[10:20]))
        step(parts, (x[20:], y[20:]))
        whole_expert = whole.particles[0].experts[0]
        parts_expert = parts.particles[0].experts[0]
        np.testing.assert_allclose(parts_expert.inputs, whole_expert.inputs)
        self.assertAlmostEqual(parts.particles[0].lml_total, parts_expert.cached_lml, places=8)
        np.testing.assert_allclose(parts_expert.cached_lml, whole_expert.cached_lml, rtol=1e-8)


class PredictionTests(SimpleTestCase):
    def setUp(self):
        self.ens, _ = run(stream(4), fast_config())
        self.Xtest = np.linspace(0, 10, 9)[:, None]

    def test_mixture_is_normalized(self):
        mixture = ensemble_mixture(self.ens, self.Xtest)
        np.testing.assert_allclose(mixture.weights.sum(axis=1), 1.0, atol=1e-10)

    def test_moments_match_monte_carlo(self):
        mixture = ensemble_mixture(self.ens, self.Xtest[:3])
        prediction = ensemble_predict(self.ens, self.Xtest[:3])
        rng = np.random.default_rng(12)
        draws = 10 ** 6
        for row in range(3):
            p = mixture.weights[row] / mixture.weights[row].sum()
            component = rng.choice(len(p), size=draws, p=p)
            samples = rng.normal(mixture.means[row, component], np.sqrt(mixture.variances[row, component]))
            self.assertLess(abs(samples.mean() - prediction.mean[row]), 3 * samples.std() / np.sqrt(draws))
            self.assertAlmostEqual(samples.var() / prediction.variance[row], 1.0, delta=0.01)

    def test_score_matches_prediction(self):
        Ytest = np.sin(self.Xtest[:, 0])
        pred_ll, pred_mse = score(self.ens, self.Xtest, Ytest)
        prediction = ensemble_predict(self.ens, self.Xtest)
        self.assertAlmostEqual(pred_ll, float(np.sum(prediction.log_density(Ytest))))
        self.assertAlmostEqual(pred_mse, float(np.mean((Ytest - prediction.mean) ** 2)))

    def test_score_rejects_empty_test_set(self):
        with self.assertRaises(InputError):
            score(self.ens, np.empty((0, 1)), [])


class FailureTests(SimpleTestCase):
    def test_failed_particle_is_dropped_and_never_resampled(self):
        ens, _ = run(stream(6), fast_config(resample_threshold=1.0))
        ens.particles[1].log_weight = -np.inf
        batch = stream(7, n=10, blocks=1)[0]
        report = step(ens, batch)
        self.assertIn(1, report.failed_particles)
        if report.resampled:
            self.assertTrue(all(not p.failed for p in ens.particles))
        self.assertAlmostEqual(float(logsumexp(ens.log_weights)), 0.0, delta=1e-9)
        prediction = ensemble_predict(ens, [[1.0]])
        self.assertTrue(np.all(np.isfinite(prediction.mean)))

    def test_all_particles_failing_is_a_numerical_error(self):
        ens, _ = run(stream(8), fast_config())
        for particle in ens.particles:
            particle.log_weight = -np.inf
        with self.assertRaises(NumericalError):
            step(ens, stream(9, n=5, blocks=1)[0])

    def test_non_finite_batch_is_rejected_before_any_change(self):
        ens, _ = run(stream(10), fast_config())
        logs = [list(p.assignment_log) for p in ens.particles]
        weights = ens.log_weights
        x = np.array([[1.0], [2.0]])
        for outputs in ([np.nan, 0.0], [0.0, np.inf]):
            with self.subTest(outputs=outputs), self.assertRaisesMessage(InputError, "non-finite"):
                step(ens, (x, outputs))
        with self.assertRaises(InputError):
            step(ens, ([[np.nan], [2.0]], [0.0, 1.0]))
        self.assertEqual(len(ens.batches), 3)
        self.assertEqual(ens.step_counter, 3)
        self.assertEqual([p.assignment_log for p in ens.particles], logs)
        np.testing.assert_array_equal(ens.log_weights, weights)
        report = step(ens, stream(11, n=8, blocks=1)[0])
        self.assertEqual(report.failed_particles, [])

    def test_linear_algebra_failure_drops_only_that_particle(self):
        ens, _ = run(stream(12), fast_config())
        broken = ens.particles[2]
        real_increment = engine.log_weight_increment

        def increment(particle):
            if particle is broken:
                raise LinAlgError("matrix is not positive definite")
            return real_increment(particle)

        with mock.patch('mixture.engine.log_weight_increment', side_effect=increment):
            report = step(ens, stream(13, n=8, blocks=1)[0])
        self.assertEqual(report.failed_particles, [2])
        self.assertAlmostEqual(float(logsumexp(ens.log_weights)), 0.0, delta=1e-9)
        self.assertTrue(np.all(np.isfinite(ensemble_predict(ens, [[1.0]]).mean)))
