"""
The particle ensemble and the per-batch SMC loop.

Each batch is processed by a parallel map over particles followed by exactly
two synchronization points: weight normalization / resampling after the
update, and weight-averaging when predicting. Particles draw from
counter-based streams keyed by ``(master_seed, step, particle index)``, and
all reductions run in particle order, so results do not depend on the number
of worker threads.
"""
import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numpy.linalg import LinAlgError
from scipy.special import logsumexp

from .bandit import warm_refresh
from .crp_niw import NIWPrior
from .exceptions import InputError, NumericalError, StateError
from .kernel_gp import KernelHyperparams, OptimizerConfig
from .particle import (
    GaussianMixture,
    Particle,
    as_batch,
    assign_batch,
    log_weight_increment,
    particle_predict,
    refresh_hyperparams,
)
from .streams import particle_stream, resample_stream, stream, RESAMPLE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineConfig:
    particles: int = 16
    alpha: float = 2.0
    # None: derive the NIW prior from the first batch.
    prior: NIWPrior = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    minibatch: int = 0
    # Resample when ESS < resample_threshold * particles.
    resample_threshold: float = 0.5
    threads: int = 1

    def __post_init__(self):
        if self.particles < 1:
            raise InputError(f"particles must be >= 1, got {self.particles}.")
        if not self.alpha > 0:
            raise InputError(f"alpha must be positive, got {self.alpha}.")
        if self.minibatch < 0:
            raise InputError(f"minibatch must be >= 0, got {self.minibatch}.")
        if not 0.0 <= self.resample_threshold <= 1.0:
            raise InputError(f"resample_threshold must lie in [0, 1], got {self.resample_threshold}.")
        if self.threads < 1:
            raise InputError(f"threads must be >= 1, got {self.threads}.")


@dataclass(frozen=True)
class StepReport:
    step: int
    batch_size: int
    ess: float
    resampled: bool
    cluster_counts: list
    refresh_counts: list
    failed_particles: list
    optimizer_runs: int
    optimizer_iterations: int
    arms_added: int = 0


@dataclass
class ParticleEnsemble:
    particles: list
    config: EngineConfig
    prior: NIWPrior
    default_theta: KernelHyperparams
    master_seed: int
    step_counter: int = 0
    # Every absorbed (inputs, outputs) batch; assignment logs index into it.
    batches: list = field(default_factory=list)
    warm_start: object = None
    last_report: StepReport = None
    # Harness bookkeeping (output offset, normalization); persisted verbatim.
    metadata: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.particles)

    @property
    def dim(self):
        return self.prior.dim

    @property
    def log_weights(self):
        return np.array([p.log_weight for p in self.particles])

    @property
    def weights(self):
        return np.exp(self.log_weights)


class EnsemblePrediction(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray
    log_density: Callable


def effective_sample_size(log_weights):
    """``1 / sum(w^2)`` of the normalized weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    weights = np.exp(log_weights - logsumexp(log_weights))
    return float(1.0 / np.sum(weights ** 2))


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling: one uniform offset, J evenly spaced positions."""
    weights = np.asarray(weights, dtype=float)
    count = len(weights)
    positions = (rng.random() + np.arange(count)) / count
    cumulative = np.cumsum(weights / weights.sum())
    return np.minimum(np.searchsorted(cumulative, positions, side='right'), count - 1)


def _map_particles(ens, work):
    items = list(enumerate(ens.particles))
    if ens.config.threads == 1:
        return [work(item) for item in items]
    with ThreadPoolExecutor(max_workers=ens.config.threads) as executor:
        return list(executor.map(work, items))


def _normalize(ens):
    log_weights = ens.log_weights
    if np.all(log_weights == -np.inf):
        raise NumericalError("Every particle failed; the ensemble has no surviving hypotheses.")
    total = logsumexp(log_weights)
    for particle in ens.particles:
        particle.log_weight -= total


def _update_particle(ens, index, particle, inputs, outputs, batch_id, step_index):
    config, warm = ens.config, ens.warm_start
    particle.reseed(particle_stream(ens.master_seed, step_index, index))
    particle.optimizer_stats.reset()
    particle.candidate_arms.clear()
    assign_batch(particle, (inputs, outputs), config.alpha, ens.prior, ens.default_theta, batch_id)
    if warm is None:
        refreshed = refresh_hyperparams(particle, config.optimizer, config.minibatch)
    else:
        refreshed = warm_refresh(
            particle, warm.pool, warm.allow_new_arm, config.optimizer, config.minibatch,
            refine=warm.refine, run_id=warm.run_id, particle_index=index,
        )
    log_weight_increment(particle)
    return refreshed


def _absorb(ens, inputs, outputs, allow_resample):
    step_index = ens.step_counter
    batch_id = len(ens.batches)
    ens.batches.append((inputs, outputs))

    def work(item):
        index, particle = item
        if particle.failed:
            particle.optimizer_stats.reset()
            return 0
        try:
            return _update_particle(ens, index, particle, inputs, outputs, batch_id, step_index)
        except (NumericalError, LinAlgError, ValueError) as exc:
            logger.warning(f"Particle {index} failed at step {step_index}: {exc}")
            particle.log_weight = -np.inf
            return 0

    refresh_counts = _map_particles(ens, work)
    for particle in ens.particles:
        if np.isnan(particle.log_weight):
            particle.log_weight = -np.inf

    # Synchronization point: merge new arms, then normalize and maybe resample.
    arms_added = 0
    if ens.warm_start is not None:
        pool, tol = ens.warm_start.pool, ens.warm_start.merge_tol
        for index, particle in enumerate(ens.particles):
            for arm in ([] if particle.failed else particle.candidate_arms):
                if pool.merge(arm, tol):
                    arms_added += 1
                    logger.info(f"Arm pool grew to {len(pool)} from particle {index}")
            particle.candidate_arms.clear()

    failed = [index for index, particle in enumerate(ens.particles) if particle.failed]
    _normalize(ens)
    ess = effective_sample_size(ens.log_weights)
    resampled = allow_resample and ess < ens.config.resample_threshold * ens.size
    if resampled:
        logger.info(f"Resampling at step {step_index} (ESS {ess:.3f} of {ens.size})")
        resample(ens)
    _normalize(ens)

    ens.step_counter += 1
    report = StepReport(
        step=step_index,
        batch_size=len(outputs),
        ess=ess,
        resampled=bool(resampled),
        cluster_counts=[len(p.experts) for p in ens.particles],
        refresh_counts=[int(count) for count in refresh_counts],
        failed_particles=failed,
        optimizer_runs=sum(p.optimizer_stats.runs for p in ens.particles),
        optimizer_iterations=sum(p.optimizer_stats.iterations for p in ens.particles),
        arms_added=arms_added,
    )
    ens.last_report = report
    return report


def init_ensemble(first_batch, config, master_seed=0, warm_start=None):
    """
    Build J particles from the first batch: each samples a partition from the
    inputs-only CRP, fits its experts, and takes the summed marginal
    likelihood as its importance weight.
    """
    inputs, outputs = as_batch(first_batch)
    if len(inputs) == 0:
        raise InputError("The first batch must be non-empty.")
    prior = config.prior if config.prior is not None else NIWPrior.from_data(inputs)
    if prior.dim != inputs.shape[1]:
        raise InputError(f"Prior has dimension {prior.dim}, data has {inputs.shape[1]}.")
    ens = ParticleEnsemble(
        particles=[Particle(dim=inputs.shape[1]) for _ in range(config.particles)],
        config=config,
        prior=prior,
        default_theta=KernelHyperparams.default_for(inputs, outputs),
        master_seed=int(master_seed),
        warm_start=warm_start,
    )
    _absorb(ens, inputs, outputs, allow_resample=False)
    return ens


def step(ens, batch):
    """Absorb one batch: assign, refresh, reweight, then resample if ESS is low."""
    if ens.step_counter < 1:
        raise StateError("Ensemble is not initialized; call init_ensemble first.")
    inputs, outputs = as_batch(batch)
    if len(inputs) == 0:
        raise InputError("Cannot step with an empty batch.")
    if inputs.shape[1] != ens.dim:
        raise InputError(f"Batch has dimension {inputs.shape[1]}, ensemble expects {ens.dim}.")
    return _absorb(ens, inputs, outputs, allow_resample=True)


def resample(ens):
    """Systematic resampling; survivors are deep copies with uniform weights."""
    rng = resample_stream(ens.master_seed, ens.step_counter)
    indices = systematic_resample(ens.weights, rng)
    survivors = [copy.deepcopy(ens.particles[i]) for i in indices]
    for index, particle in enumerate(survivors):
        particle.log_weight = -np.log(ens.size)
        particle.reseed(stream(ens.master_seed, RESAMPLE, ens.step_counter, index + 1))
    ens.particles = survivors
    return ens


def ensemble_mixture(ens, Xtest):
    """The full two-level predictive mixture, flattened into one GaussianMixture."""
    if ens.step_counter < 1:
        raise StateError("Ensemble is not initialized; call init_ensemble first.")
    alive = [(index, p) for index, p in enumerate(ens.particles) if not p.failed]

    def work(item):
        _, particle = item
        return particle_predict(particle, Xtest, ens.prior, ens.config.alpha, ens.default_theta)

    if ens.config.threads == 1:
        mixtures = [work(item) for item in alive]
    else:
        with ThreadPoolExecutor(max_workers=ens.config.threads) as executor:
            mixtures = list(executor.map(work, alive))

    # Synchronization point: weight each particle's mixture by w_j.
    log_weights = np.array([p.log_weight for _, p in alive])
    log_weights = log_weights - logsumexp(log_weights)
    return GaussianMixture(
        log_weights=np.hstack([lw + m.log_weights for lw, m in zip(log_weights, mixtures)]),
        means=np.hstack([m.means for m in mixtures]),
        variances=np.hstack([m.variances for m in mixtures]),
    )


def ensemble_predict(ens, Xtest):
    mixture = ensemble_mixture(ens, Xtest)
    return EnsemblePrediction(mean=mixture.mean, variance=mixture.variance, log_density=mixture.logpdf)


def score(ens, Xtest, Ytest):
    """Summed predictive log density and mean squared error of the predictive mean."""
    Ytest = np.asarray(Ytest, dtype=float).ravel()
    if len(Ytest) == 0:
        raise InputError("Cannot score an empty test set.")
    prediction = ensemble_predict(ens, Xtest)
    pred_ll = float(np.sum(prediction.log_density(Ytest)))
    pred_mse = float(np.mean((Ytest - prediction.mean) ** 2))
    return pred_ll, pred_mse
