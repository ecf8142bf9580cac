"""
Conjugate input-space clustering.

Inputs are modelled as a Dirichlet-process mixture of Gaussians with a
normal-inverse-Wishart base measure. A cluster is summarised by its sufficient
statistics; its posterior predictive for a new input is a multivariate
Student-t, and the CRP assignment probabilities weight those predictives by
cluster size (or by the concentration for a new cluster).
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, solve_triangular
from scipy.special import gammaln, logsumexp

from .exceptions import InputError, NumericalError
from .kernel_gp import as_points

PRIOR_LAMBDA = 0.01


@dataclass(frozen=True)
class NIWPrior:
    """NIW(mu0, lambda, Psi, nu); posteriors are represented with the same type."""

    mu0: np.ndarray
    lam: float
    Psi: np.ndarray
    nu: float

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).ravel()
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        dim = len(mu0)
        if Psi.shape != (dim, dim):
            raise InputError(f"Psi must be {dim}x{dim}, got {Psi.shape}.")
        if not np.allclose(Psi, Psi.T):
            raise InputError("Psi must be symmetric.")
        if not self.lam > 0:
            raise InputError(f"lambda must be positive, got {self.lam}.")
        if not self.nu > dim - 1:
            raise InputError(f"nu must exceed D - 1 = {dim - 1}, got {self.nu}.")
        object.__setattr__(self, 'mu0', mu0)
        object.__setattr__(self, 'Psi', Psi)
        object.__setattr__(self, 'lam', float(self.lam))
        object.__setattr__(self, 'nu', float(self.nu))

    @property
    def dim(self):
        return len(self.mu0)

    @classmethod
    def from_data(cls, inputs):
        """
        Weak data-driven prior: centred on the batch mean, nu = D + 2 and Psi
        the batch covariance scaled by nu, so the prior mean covariance
        matches the data.
        """
        inputs = as_points(inputs)
        if len(inputs) == 0:
            raise InputError("Cannot derive an NIW prior from an empty batch.")
        dim = inputs.shape[1]
        nu = dim + 2.0
        if len(inputs) < 2:
            covariance = np.eye(dim)
        else:
            covariance = np.atleast_2d(np.cov(inputs, rowvar=False, bias=True))
            try:
                cho_factor(covariance)
            except (LinAlgError, ValueError):
                covariance = covariance + 1e-6 * max(1.0, float(np.trace(covariance))) * np.eye(dim)
        return cls(mu0=inputs.mean(axis=0), lam=PRIOR_LAMBDA, Psi=covariance * nu, nu=nu)


@dataclass(frozen=True)
class ClusterStats:
    count: int
    sum_x: np.ndarray
    sum_outer: np.ndarray

    @classmethod
    def empty(cls, dim):
        return cls(count=0, sum_x=np.zeros(dim), sum_outer=np.zeros((dim, dim)))

    @classmethod
    def from_points(cls, points):
        points = as_points(points)
        return cls(count=len(points), sum_x=points.sum(axis=0), sum_outer=points.T @ points)

    @property
    def dim(self):
        return len(self.sum_x)


@dataclass(frozen=True)
class MVTParams:
    loc: np.ndarray
    scale: np.ndarray
    dof: float


def update_stats(stats, x, remove=False):
    """Add (or with ``remove`` subtract) one point from the sufficient statistics."""
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != stats.dim:
        raise InputError(f"Point has dimension {len(x)}, cluster has {stats.dim}.")
    if remove:
        if stats.count < 1:
            raise InputError("Cannot remove a point from an empty cluster.")
        if stats.count == 1:
            return ClusterStats.empty(stats.dim)
        return ClusterStats(stats.count - 1, stats.sum_x - x, stats.sum_outer - np.outer(x, x))
    return ClusterStats(stats.count + 1, stats.sum_x + x, stats.sum_outer + np.outer(x, x))


def niw_posterior(prior, stats):
    if stats.count == 0:
        return prior
    n = stats.count
    xbar = stats.sum_x / n
    scatter = stats.sum_outer - n * np.outer(xbar, xbar)
    lam_n = prior.lam + n
    diff = xbar - prior.mu0
    Psi_n = prior.Psi + scatter + (prior.lam * n / lam_n) * np.outer(diff, diff)
    return NIWPrior(
        mu0=(prior.lam * prior.mu0 + stats.sum_x) / lam_n,
        lam=lam_n,
        Psi=0.5 * (Psi_n + Psi_n.T),
        nu=prior.nu + n,
    )


def predictive_params(niw):
    """Student-t parameters of the NIW posterior predictive."""
    dof = niw.nu - niw.dim + 1.0
    scale = niw.Psi * (niw.lam + 1.0) / (niw.lam * dof)
    return MVTParams(loc=niw.mu0, scale=scale, dof=dof)


def _mvt_logpdf(points, params):
    dim = len(params.loc)
    try:
        chol, _ = cho_factor(params.scale, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"Student-t scale matrix is not positive definite: {exc}") from exc
    solved = solve_triangular(chol, (points - params.loc).T, lower=True)
    maha = np.sum(solved ** 2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    dof = params.dof
    return (
        gammaln(0.5 * (dof + dim)) - gammaln(0.5 * dof)
        - 0.5 * dim * np.log(dof * np.pi) - 0.5 * log_det
        - 0.5 * (dof + dim) * np.log1p(maha / dof)
    )


def mvt_log_predictive(x, prior_or_posterior):
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != prior_or_posterior.dim:
        raise InputError(f"Point has dimension {len(x)}, expected {prior_or_posterior.dim}.")
    return float(_mvt_logpdf(x[None, :], predictive_params(prior_or_posterior))[0])


def _check_clusters(clusters, alpha):
    if not alpha > 0:
        raise InputError(f"alpha must be positive, got {alpha}.")
    for stats in clusters:
        if stats.count < 1:
            raise InputError("Assignment scores need occupied clusters only.")


def crp_assignment_logprobs(x, clusters, alpha, prior):
    """
    Normalized log assignment probabilities for one input: one slot per
    existing cluster followed by the new-cluster slot.
    """
    x = np.asarray(x, dtype=float).ravel()
    return assignment_logprob_matrix(x[None, :], clusters, alpha, prior)[0]


def assignment_logprob_matrix(points, clusters, alpha, prior):
    """Row-wise ``crp_assignment_logprobs`` for many inputs against fixed clusters."""
    points = as_points(points)
    if points.shape[1] != prior.dim:
        raise InputError(f"Points have dimension {points.shape[1]}, expected {prior.dim}.")
    _check_clusters(clusters, alpha)
    scores = np.empty((len(points), len(clusters) + 1))
    for k, stats in enumerate(clusters):
        posterior = niw_posterior(prior, stats)
        scores[:, k] = np.log(stats.count) + _mvt_logpdf(points, predictive_params(posterior))
    scores[:, -1] = np.log(alpha) + _mvt_logpdf(points, predictive_params(prior))
    return scores - logsumexp(scores, axis=1, keepdims=True)


def sample_assignment(logprobs, rng):
    """Categorical draw over the slots of ``logprobs`` using one uniform from ``rng``."""
    cdf = np.cumsum(np.exp(np.asarray(logprobs, dtype=float)))
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side='right'))
    return min(index, len(cdf) - 1)
