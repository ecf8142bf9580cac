"""
A single SMC hypothesis: an input-space partition with one GP expert per
cluster, the cached tempered marginal likelihoods and the particle log-weight.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .crp_niw import (
    ClusterStats,
    assignment_logprob_matrix,
    crp_assignment_logprobs,
    sample_assignment,
    update_stats,
)
from .exceptions import InputError, NumericalError, StateError
from .kernel_gp import (
    GPDataView,
    KernelHyperparams,
    OptimizerStats,
    as_points,
    gp_predict,
    log_marginal_likelihood,
    optimize_hyperparams,
)


def as_batch(batch):
    """Split an ``(X, Y)`` pair into an ``(n, D)`` input array and an output vector."""
    try:
        inputs, outputs = batch
    except (TypeError, ValueError) as exc:
        raise InputError("A batch must be an (inputs, outputs) pair.") from exc
    inputs = as_points(inputs)
    outputs = np.asarray(outputs, dtype=float).ravel()
    if len(inputs) != len(outputs):
        raise InputError(f"Batch inputs and outputs differ in length ({len(inputs)} != {len(outputs)}).")
    if not (np.isfinite(inputs).all() and np.isfinite(outputs).all()):
        rows = np.flatnonzero(~(np.isfinite(inputs).all(axis=1) & np.isfinite(outputs)))
        raise InputError(f"Batch has non-finite values at row(s) {', '.join(str(r) for r in rows[:5])}.")
    return inputs, outputs


@dataclass
class ExpertState:
    stats: ClusterStats
    theta: KernelHyperparams
    cached_lml: float = 0.0
    dirty: bool = True
    fitted: bool = False
    # Row indices of the tempered minibatch; None means all members are used.
    subsample: np.ndarray = None
    # Member rows live in the first stats.count rows; capacity doubles on overflow.
    input_rows: np.ndarray = None
    output_rows: np.ndarray = None

    @classmethod
    def empty(cls, dim, theta, capacity=8):
        return cls(
            stats=ClusterStats.empty(dim),
            theta=theta,
            input_rows=np.empty((capacity, dim)),
            output_rows=np.empty(capacity),
        )

    @property
    def inputs(self):
        return self.input_rows[: self.stats.count]

    @property
    def outputs(self):
        return self.output_rows[: self.stats.count]

    @property
    def member_data(self):
        return GPDataView(self.inputs, self.outputs)

    def fit_view(self):
        if self.subsample is None:
            return self.member_data
        return GPDataView(
            self.inputs[self.subsample],
            self.outputs[self.subsample],
            temper_power=self.stats.count / len(self.subsample),
        )

    def _reserve(self, size):
        capacity = len(self.output_rows)
        if size <= capacity:
            return
        capacity = max(size, 2 * capacity)
        input_rows = np.empty((capacity, self.input_rows.shape[1]))
        output_rows = np.empty(capacity)
        input_rows[: self.stats.count] = self.inputs
        output_rows[: self.stats.count] = self.outputs
        self.input_rows, self.output_rows = input_rows, output_rows

    def absorb(self, x, y):
        count = self.stats.count
        self._reserve(count + 1)
        self.input_rows[count] = x
        self.output_rows[count] = y
        self.stats = update_stats(self.stats, x)
        self.dirty = True

    def draw_subsample(self, rng, minibatch):
        if minibatch and self.stats.count > minibatch:
            self.subsample = np.sort(rng.choice(self.stats.count, size=minibatch, replace=False))
        else:
            self.subsample = None

    def adopt(self, theta, value):
        self.theta = theta
        self.cached_lml = float(value)
        self.dirty = False
        self.fitted = True

    def evaluate(self, theta):
        """Adopt ``theta`` without optimizing, caching its marginal likelihood."""
        self.adopt(theta, log_marginal_likelihood(self.fit_view(), theta))


@dataclass
class Particle:
    dim: int
    experts: dict = field(default_factory=dict)
    log_weight: float = 0.0
    assignment_log: list = field(default_factory=list)
    rng_stream: np.random.Generator = None
    # Sum of cached_lml at the end of the previous step.
    lml_total: float = 0.0
    next_cluster_id: int = 0
    optimizer_stats: OptimizerStats = field(default_factory=OptimizerStats)
    candidate_arms: list = field(default_factory=list)

    @property
    def failed(self):
        return self.log_weight == -np.inf

    @property
    def points_absorbed(self):
        return sum(expert.stats.count for expert in self.experts.values())

    def reseed(self, rng):
        self.rng_stream = rng

    def open_cluster(self, theta):
        cluster_id = self.next_cluster_id
        self.next_cluster_id += 1
        self.experts[cluster_id] = ExpertState.empty(self.dim, theta)
        return cluster_id

    def replay(self, assignment_log, batches, theta):
        """Rebuild expert membership from an assignment log over stored batches."""
        for batch_id, index, cluster_id in assignment_log:
            inputs, outputs = batches[batch_id]
            if cluster_id not in self.experts:
                self.experts[cluster_id] = ExpertState.empty(self.dim, theta)
                self.next_cluster_id = max(self.next_cluster_id, cluster_id + 1)
            self.experts[cluster_id].absorb(inputs[index], outputs[index])
            self.assignment_log.append((batch_id, index, cluster_id))


@dataclass(frozen=True)
class GaussianMixture:
    """Per-point 1-D Gaussian mixtures; rows are test points, columns components."""

    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def mean(self):
        return np.sum(self.weights * self.means, axis=1)

    @property
    def variance(self):
        mean = self.mean
        second_moment = np.sum(self.weights * (self.variances + self.means ** 2), axis=1)
        return np.maximum(second_moment - mean ** 2, 0.0)

    def logpdf(self, outputs):
        outputs = np.asarray(outputs, dtype=float).ravel()[:, None]
        component = norm.logpdf(outputs, self.means, np.sqrt(self.variances))
        return logsumexp(self.log_weights + component, axis=1)


def assign_batch(p, batch, alpha, prior, default_theta=None, batch_id=0):
    """
    Sample a cluster for every point of ``batch`` in order, updating the
    statistics after each draw. New clusters start from ``default_theta``.
    """
    inputs, outputs = as_batch(batch)
    if len(inputs) == 0:
        raise InputError("Cannot assign an empty batch.")
    if inputs.shape[1] != p.dim or prior.dim != p.dim:
        raise InputError(f"Batch has dimension {inputs.shape[1]}, particle expects {p.dim}.")
    if p.rng_stream is None:
        raise StateError("Particle has no random stream; reseed it before assigning.")
    if default_theta is None:
        default_theta = KernelHyperparams.default_for(inputs, outputs)

    assigned = []
    for index, (x, y) in enumerate(zip(inputs, outputs)):
        cluster_ids = list(p.experts)
        logprobs = crp_assignment_logprobs(
            x, [p.experts[k].stats for k in cluster_ids], alpha, prior,
        )
        slot = sample_assignment(logprobs, p.rng_stream)
        if slot == len(cluster_ids):
            cluster_id = p.open_cluster(default_theta)
        else:
            cluster_id = cluster_ids[slot]
        p.experts[cluster_id].absorb(x, y)
        p.assignment_log.append((batch_id, index, cluster_id))
        assigned.append(cluster_id)
    return assigned


def _best_start(view, candidates):
    best, best_value = None, -np.inf
    for theta in candidates:
        try:
            value = log_marginal_likelihood(view, theta)
        except NumericalError:
            continue
        if best is None or value > best_value:
            best, best_value = theta, value
    return best if best is not None else candidates[0]


def refresh_hyperparams(p, opts, minibatch=0):
    """Re-fit every dirty expert by gradient ascent; returns how many were refit."""
    refreshed = 0
    for expert in p.experts.values():
        if not expert.dirty:
            continue
        expert.draw_subsample(p.rng_stream, minibatch)
        view = expert.fit_view()
        start = expert.theta
        if not expert.fitted and expert.stats.count >= 2:
            start = _best_start(view, [KernelHyperparams.default_for(view.inputs, view.outputs), start])
        theta, value = optimize_hyperparams(view, start, opts, p.optimizer_stats)
        expert.adopt(theta, value)
        refreshed += 1
    return refreshed


def log_weight_increment(p):
    """
    Ratio of the current to the previous marginal likelihood, in log space.

    Both totals are the cached per-cluster values, so increments telescope:
    their sum over steps is the final total minus the initial one.
    """
    total = float(sum(expert.cached_lml for expert in p.experts.values()))
    increment = total - p.lml_total
    p.lml_total = total
    p.log_weight += increment
    return increment


def particle_predict(p, Xtest, prior, alpha, default_theta):
    """
    Predictive mixture over this particle's experts plus an unoccupied-cluster
    component (zero-mean prior GP under ``default_theta``).
    """
    if not p.experts:
        raise StateError("Particle has no experts to predict with.")
    Xtest = as_points(Xtest)
    cluster_ids = list(p.experts)
    log_weights = assignment_logprob_matrix(
        Xtest, [p.experts[k].stats for k in cluster_ids], alpha, prior,
    )
    means = np.zeros_like(log_weights)
    variances = np.empty_like(log_weights)
    for column, cluster_id in enumerate(cluster_ids):
        expert = p.experts[cluster_id]
        predictive = gp_predict(expert.fit_view(), expert.theta, Xtest)
        means[:, column] = predictive.mean
        variances[:, column] = predictive.variance
    variances[:, -1] = default_theta.signal_var + default_theta.noise_var
    return GaussianMixture(log_weights=log_weights, means=means, variances=variances)
