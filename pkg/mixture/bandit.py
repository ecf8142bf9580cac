"""
Hyperparameter arms harvested from a fitted ensemble and reused on new data.

A warm start replaces per-cluster gradient optimization by picking, among the
pooled arms, the kernel setting with the highest marginal likelihood on the
cluster's data. When no pooled arm fits, a freshly optimized setting can be
adopted and later appended to the pool.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericalError, StateError
from .kernel_gp import (
    KernelHyperparams,
    OptimizerConfig,
    log_marginal_likelihood,
    optimize_hyperparams,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Arm:
    theta: KernelHyperparams
    # (source run id, particle index, cluster id)
    provenance: tuple
    harvest_lml: float


@dataclass
class ArmPool:
    arms: list = field(default_factory=list)
    version: int = 0

    def __len__(self):
        return len(self.arms)

    def append(self, arm):
        self.arms.append(arm)
        self.version += 1

    def nearest(self, theta):
        """Largest log-parameter difference to the closest pooled arm; inf when empty."""
        if not self.arms:
            return np.inf
        pooled = np.array([arm.theta.as_array() for arm in self.arms])
        return float(np.min(np.max(np.abs(pooled - theta.as_array()), axis=1)))

    def merge(self, arm, tol=0.0):
        """Append ``arm`` unless a pooled arm lies within ``tol`` of it in every log parameter."""
        if self.nearest(arm.theta) <= tol:
            return False
        self.append(arm)
        return True


@dataclass(frozen=True)
class WarmStart:
    """How an ensemble refreshes hyperparameters from an arm pool."""

    pool: ArmPool
    allow_new_arm: bool = False
    refine: bool = False
    run_id: str = 'warm'
    # New arms this close to a pooled one are dropped at the merge.
    merge_tol: float = 0.05


def harvest_arms(ens, run_id):
    """One arm per expert of the highest-weight particle (lowest index on ties)."""
    if ens.step_counter < 1:
        raise StateError("Cannot harvest arms from an ensemble that has not absorbed data.")
    best = int(np.argmax(ens.log_weights))
    particle = ens.particles[best]
    arms = [
        Arm(theta=expert.theta, provenance=(run_id, best, cluster_id), harvest_lml=expert.cached_lml)
        for cluster_id, expert in particle.experts.items()
    ]
    logger.info(f"Harvested {len(arms)} arms from particle {best} of run {run_id}")
    return ArmPool(arms=arms, version=1)


def select_arm(pool, cluster_data):
    """Arm with the highest marginal likelihood on ``cluster_data``; first one wins ties."""
    if not pool.arms:
        raise InputError("Arm pool is empty.")
    if cluster_data.size == 0:
        raise InputError("Cannot score arms on empty cluster data.")
    best, best_reward = None, -np.inf
    for arm in pool.arms:
        try:
            reward = log_marginal_likelihood(cluster_data, arm.theta)
        except NumericalError:
            continue
        if best is None or reward > best_reward:
            best, best_reward = arm, reward
    if best is None:
        raise NumericalError(f"All {len(pool.arms)} arms failed to evaluate on the cluster data.")
    return best, best_reward


def warm_refresh(p, pool, allow_new_arm, opts=None, minibatch=0, refine=False,
                 run_id='warm', particle_index=0):
    """
    Counterpart of ``refresh_hyperparams`` that selects arms instead of
    optimizing. New arms are parked on ``p.candidate_arms``; the ensemble
    merges them into ``pool`` once every particle has finished the batch.
    """
    opts = opts or OptimizerConfig()
    refreshed = 0
    for cluster_id, expert in p.experts.items():
        if not expert.dirty:
            continue
        expert.draw_subsample(p.rng_stream, minibatch)
        view = expert.fit_view()
        arm, reward = select_arm(pool, view)
        theta, value = arm.theta, reward
        if refine:
            theta, value = optimize_hyperparams(view, theta, opts, p.optimizer_stats)
        if allow_new_arm:
            try:
                fresh_theta, fresh_value = optimize_hyperparams(
                    view, KernelHyperparams.default_for(view.inputs, view.outputs),
                    opts, p.optimizer_stats,
                )
            except (InputError, NumericalError) as exc:
                logger.debug(f"Fresh arm for cluster {cluster_id} failed: {exc}")
            else:
                if fresh_value > value:
                    theta, value = fresh_theta, fresh_value
                    p.candidate_arms.append(
                        Arm(theta=fresh_theta, provenance=(run_id, particle_index, cluster_id),
                            harvest_lml=fresh_value)
                    )
        expert.adopt(theta, value)
        refreshed += 1
    return refreshed
