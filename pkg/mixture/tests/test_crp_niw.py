import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import quad
from scipy.special import gammaln, logsumexp, multigammaln
from scipy.stats import invgamma, norm

from mixture.crp_niw import (
    ClusterStats,
    NIWPrior,
    crp_assignment_logprobs,
    mvt_log_predictive,
    niw_posterior,
    predictive_params,
    sample_assignment,
    update_stats,
)
from mixture.exceptions import InputError


def prior_1d(mu0=0.0, lam=1.0, psi=2.0, nu=3.0):
    return NIWPrior(mu0=[mu0], lam=lam, Psi=[[psi]], nu=nu)


def log_marginal(points, prior):
    """Closed-form NIW evidence of a set of points."""
    points = np.atleast_2d(points)
    n, dim = points.shape
    post = niw_posterior(prior, ClusterStats.from_points(points))
    return (
        -0.5 * n * dim * np.log(np.pi)
        + multigammaln(0.5 * post.nu, dim) - multigammaln(0.5 * prior.nu, dim)
        + 0.5 * prior.nu * np.linalg.slogdet(prior.Psi)[1] - 0.5 * post.nu * np.linalg.slogdet(post.Psi)[1]
        + 0.5 * dim * (np.log(prior.lam) - np.log(post.lam))
    )


def set_partitions(n):
    """Canonical labelings (first appearance order) of every partition of range(n)."""
    def extend(labels):
        if len(labels) == n:
            yield tuple(labels)
            return
        for label in range(max(labels, default=-1) + 2):
            yield from extend(labels + [label])
    yield from extend([])


def log_niw_density_1d(mu, var, niw):
    return (
        norm.logpdf(mu, niw.mu0[0], np.sqrt(var / niw.lam))
        + invgamma.logpdf(var, 0.5 * niw.nu, scale=0.5 * niw.Psi[0, 0])
    )


class UpdateStatsTests(SimpleTestCase):
    def test_add_to_empty(self):
        stats = update_stats(ClusterStats.empty(2), [1.0, 2.0])
        self.assertEqual(stats.count, 1)
        np.testing.assert_array_equal(stats.sum_x, [1.0, 2.0])
        np.testing.assert_array_equal(stats.sum_outer, [[1.0, 2.0], [2.0, 4.0]])

    def test_add_then_remove_restores(self):
        base = ClusterStats.from_points(np.random.default_rng(0).normal(size=(5, 2)))
        x = np.array([0.3, -1.7])
        restored = update_stats(update_stats(base, x), x, remove=True)
        self.assertEqual(restored.count, base.count)
        np.testing.assert_allclose(restored.sum_x, base.sum_x, atol=1e-12)
        np.testing.assert_allclose(restored.sum_outer, base.sum_outer, atol=1e-12)

    def test_incremental_matches_recompute(self):
        points = np.random.default_rng(1).normal(size=(100, 3))
        stats = ClusterStats.empty(3)
        for x in points:
            stats = update_stats(stats, x)
        batch = ClusterStats.from_points(points)
        np.testing.assert_allclose(stats.sum_x, batch.sum_x, atol=1e-10)
        np.testing.assert_allclose(stats.sum_outer, batch.sum_outer, atol=1e-10)

    def test_remove_from_empty(self):
        with self.assertRaises(InputError):
            update_stats(ClusterStats.empty(1), [0.0], remove=True)

    def test_removing_last_point_gives_exact_zeros(self):
        stats = update_stats(update_stats(ClusterStats.empty(1), [0.1]), [0.1], remove=True)
        self.assertEqual(stats.count, 0)
        np.testing.assert_array_equal(stats.sum_x, [0.0])


class PosteriorTests(SimpleTestCase):
    def test_empty_stats_return_prior(self):
        prior = prior_1d()
        self.assertIs(niw_posterior(prior, ClusterStats.empty(1)), prior)

    def test_single_observation_arithmetic(self):
        post = niw_posterior(prior_1d(mu0=0.0, lam=1.0, nu=3.0), ClusterStats.from_points([[2.0]]))
        self.assertAlmostEqual(post.mu0[0], 1.0)
        self.assertEqual(post.lam, 2.0)
        self.assertEqual(post.nu, 4.0)

    def test_incremental_equals_pooled(self):
        prior = NIWPrior(mu0=[0.5, -0.5], lam=0.3, Psi=[[2.0, 0.3], [0.3, 1.0]], nu=4.0)
        points = np.random.default_rng(2).normal(size=(30, 2))
        stats = ClusterStats.empty(2)
        for x in points:
            stats = update_stats(stats, x)
        incremental = niw_posterior(prior, stats)
        pooled = niw_posterior(prior, ClusterStats.from_points(points))
        np.testing.assert_allclose(incremental.mu0, pooled.mu0, atol=1e-10)
        np.testing.assert_allclose(incremental.Psi, pooled.Psi, atol=1e-10)

    def test_posterior_is_prior_times_likelihood_on_a_grid(self):
        prior = prior_1d(mu0=0.0, lam=0.5, psi=1.5, nu=3.0)
        points = np.random.default_rng(3).normal(1.0, 0.7, size=50)
        post = niw_posterior(prior, ClusterStats.from_points(points[:, None]))
        mus, variances = np.meshgrid(np.linspace(0.6, 1.4, 9), np.linspace(0.3, 0.9, 9))
        log_ratio = (
            log_niw_density_1d(mus, variances, post)
            - log_niw_density_1d(mus, variances, prior)
            - np.sum(norm.logpdf(points[:, None, None], mus, np.sqrt(variances)), axis=0)
        )
        # The ratio is the inverse evidence everywhere on the grid.
        evidence = log_marginal(points[:, None], prior)
        np.testing.assert_allclose(log_ratio, -evidence, rtol=1e-8)

    def test_prior_validation(self):
        with self.assertRaises(InputError):
            NIWPrior(mu0=[0.0], lam=0.0, Psi=[[1.0]], nu=3.0)
        with self.assertRaises(InputError):
            NIWPrior(mu0=[0.0, 0.0], lam=1.0, Psi=[[1.0, 0.2], [0.1, 1.0]], nu=3.0)
        with self.assertRaises(InputError):
            NIWPrior(mu0=[0.0, 0.0], lam=1.0, Psi=np.eye(2), nu=0.5)

    def test_data_prior_defaults(self):
        inputs = np.random.default_rng(4).normal(size=(40, 2))
        prior = NIWPrior.from_data(inputs)
        self.assertEqual(prior.nu, 4.0)
        self.assertEqual(prior.lam, 0.01)
        np.testing.assert_allclose(prior.mu0, inputs.mean(axis=0))
        np.testing.assert_allclose(prior.Psi, np.cov(inputs, rowvar=False, bias=True) * 4.0)


class PredictiveTests(SimpleTestCase):
    def test_symmetric_about_location(self):
        post = niw_posterior(prior_1d(), ClusterStats.from_points([[0.4], [1.0]]))
        loc = predictive_params(post).loc[0]
        self.assertAlmostEqual(mvt_log_predictive([loc + 0.8], post), mvt_log_predictive([loc - 0.8], post), places=12)

    def test_maximized_at_location(self):
        post = niw_posterior(prior_1d(), ClusterStats.from_points([[0.4], [1.0], [-0.2]]))
        loc = predictive_params(post).loc[0]
        scan = [mvt_log_predictive([loc + d], post) for d in np.linspace(-3, 3, 61)]
        self.assertEqual(int(np.argmax(scan)), 30)

    def test_integrates_to_one(self):
        post = niw_posterior(prior_1d(), ClusterStats.from_points([[0.4], [1.0]]))
        total, _ = quad(lambda x: np.exp(mvt_log_predictive([x], post)), -np.inf, np.inf)
        self.assertAlmostEqual(total, 1.0, delta=1e-4)

    def test_prior_predictive_matches_monte_carlo(self):
        prior = prior_1d(mu0=0.5, lam=1.0, psi=2.0, nu=4.0)
        rng = np.random.default_rng(5)
        draws = 10 ** 6
        variances = invgamma.rvs(0.5 * prior.nu, scale=0.5 * prior.Psi[0, 0], size=draws, random_state=rng)
        means = prior.mu0[0] + np.sqrt(variances / prior.lam) * rng.standard_normal(draws)
        for x in (-1.0, 0.5, 2.0):
            densities = norm.pdf(x, means, np.sqrt(variances))
            estimate, se = densities.mean(), densities.std() / np.sqrt(draws)
            self.assertLess(abs(np.exp(mvt_log_predictive([x], prior)) - estimate), 3 * se)

    def test_dimension_mismatch(self):
        with self.assertRaises(InputError):
            mvt_log_predictive([0.0, 1.0], prior_1d())


class AssignmentTests(SimpleTestCase):
    def test_first_customer_opens_a_cluster(self):
        logprobs = crp_assignment_logprobs([0.3], [], 2.0, prior_1d())
        np.testing.assert_array_equal(logprobs, [0.0])

    def test_normalized(self):
        rng = np.random.default_rng(6)
        prior = NIWPrior(mu0=[0.0, 0.0], lam=0.1, Psi=np.eye(2) * 3.0, nu=4.0)
        clusters = [ClusterStats.from_points(rng.normal(size=(k + 1, 2))) for k in range(4)]
        for _ in range(10):
            logprobs = crp_assignment_logprobs(rng.normal(size=2), clusters, 1.5, prior)
            self.assertAlmostEqual(float(np.sum(np.exp(logprobs))), 1.0, delta=1e-12)

    def test_count_proportionality(self):
        prior = prior_1d()
        big, small = ClusterStats.from_points([[1.0]] * 3), ClusterStats.from_points([[1.0]])
        x = [0.7]
        logprobs = crp_assignment_logprobs(x, [big, small], 2.0, prior)
        expected = (
            np.log(3.0) + mvt_log_predictive(x, niw_posterior(prior, big))
            - mvt_log_predictive(x, niw_posterior(prior, small))
        )
        self.assertAlmostEqual(logprobs[0] - logprobs[1], expected, places=12)

    def test_empty_cluster_rejected(self):
        with self.assertRaises(InputError):
            crp_assignment_logprobs([0.0], [ClusterStats.empty(1)], 1.0, prior_1d())

    def test_sequential_joint_matches_enumeration(self):
        prior = prior_1d(mu0=0.0, lam=0.5, psi=1.0, nu=2.5)
        alpha = 1.7
        rng = np.random.default_rng(7)
        for n in (1, 2, 3):
            points = rng.normal(size=(n, 1))
            for labels in set_partitions(n):
                sequential = 0.0
                clusters = []
                for i, (x, label) in enumerate(zip(points, labels)):
                    logprobs = crp_assignment_logprobs(x, clusters, alpha, prior)
                    scores = [np.log(s.count) + mvt_log_predictive(x, niw_posterior(prior, s)) for s in clusters]
                    scores.append(np.log(alpha) + mvt_log_predictive(x, prior))
                    normalizer = logsumexp(scores) - np.log(alpha + i)
                    sequential += logprobs[label] + normalizer
                    if label == len(clusters):
                        clusters.append(ClusterStats.empty(1))
                    clusters[label] = update_stats(clusters[label], x)
                sizes = np.bincount(labels)
                eppf = len(sizes) * np.log(alpha) + gammaln(alpha) - gammaln(alpha + n) + np.sum(gammaln(sizes))
                marginals = sum(
                    log_marginal(points[np.array(labels) == k], prior) for k in range(len(sizes))
                )
                self.assertLess(abs(sequential - (eppf + marginals)), 1e-6 * abs(eppf + marginals) + 1e-12)

    def test_sequential_probabilities_sum_to_one_over_partitions(self):
        prior = prior_1d()
        points = np.array([[0.1], [1.5], [-0.4]])
        total = 0.0
        for labels in set_partitions(3):
            clusters, log_p = [], 0.0
            for x, label in zip(points, labels):
                log_p += crp_assignment_logprobs(x, clusters, 1.0, prior)[label]
                if label == len(clusters):
                    clusters.append(ClusterStats.empty(1))
                clusters[label] = update_stats(clusters[label], x)
            total += np.exp(log_p)
        self.assertAlmostEqual(total, 1.0, places=12)


class SampleAssignmentTests(SimpleTestCase):
    def test_single_slot(self):
        self.assertEqual(sample_assignment([0.0], np.random.default_rng(0)), 0)

    def test_frequency(self):
        rng = np.random.default_rng(8)
        logprobs = np.log([0.5, 0.5])
        draws = [sample_assignment(logprobs, rng) for _ in range(10 ** 5)]
        self.assertAlmostEqual(np.mean(draws), 0.5, delta=0.01)

    def test_deterministic_per_seed(self):
        logprobs = np.log([0.2, 0.3, 0.5])
        rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
        a = [sample_assignment(logprobs, rng_a) for _ in range(50)]
        b = [sample_assignment(logprobs, rng_b) for _ in range(50)]
        self.assertEqual(a, b)

    def test_zero_probability_slot_never_drawn(self):
        rng = np.random.default_rng(10)
        logprobs = np.array([-np.inf, 0.0])
        self.assertTrue(all(sample_assignment(logprobs, rng) == 1 for _ in range(1000)))

