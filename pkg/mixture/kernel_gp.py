"""
RBF-kernel Gaussian-process machinery for a single expert.

All functions are pure: they take immutable inputs and return new values, so
particles running on different threads can call them without coordination.
Hyperparameters are handled in log space throughout and the prior over them is
flat, so the "MAP" fit is plain maximum (tempered) marginal likelihood.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .exceptions import InputError, NumericalError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

# Multiples of the mean diagonal tried after a plain factorization fails.
JITTER_LADDER = tuple(1e-8 * 10.0 ** k for k in range(7))

LENGTHSCALE_FLOOR = 1e-3
SIGNAL_VAR_FLOOR = 1e-6
NOISE_VAR_FLOOR = 1e-8


def as_points(values):
    """Coerce ``values`` into an ``(n, D)`` float array; a flat vector is n 1-D points."""
    points = np.asarray(values, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2:
        raise InputError(f"Expected a list of points, got an array of shape {points.shape}.")
    return points


@dataclass(frozen=True)
class KernelHyperparams:
    """Log-domain parameters of an isotropic RBF kernel with Gaussian noise."""

    log_lengthscale: float
    log_signal_var: float
    log_noise_var: float

    def __post_init__(self):
        for name in ('log_lengthscale', 'log_signal_var', 'log_noise_var'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise InputError(f"{name} must be finite, got {value}.")
            object.__setattr__(self, name, value)

    @property
    def lengthscale(self):
        return float(np.exp(self.log_lengthscale))

    @property
    def signal_var(self):
        return float(np.exp(self.log_signal_var))

    @property
    def noise_var(self):
        return float(np.exp(self.log_noise_var))

    def as_array(self):
        return np.array([self.log_lengthscale, self.log_signal_var, self.log_noise_var])

    @classmethod
    def from_array(cls, values):
        log_lengthscale, log_signal_var, log_noise_var = (float(v) for v in values)
        return cls(log_lengthscale, log_signal_var, log_noise_var)

    @classmethod
    def default_for(cls, inputs, outputs):
        """
        Starting point for a new cluster derived from its own data.

        Lengthscale is the mean per-dimension input standard deviation, signal
        variance the output variance and noise a tenth of it, each floored.
        """
        inputs = as_points(inputs)
        outputs = np.asarray(outputs, dtype=float).ravel()
        spread = float(np.mean(np.std(inputs, axis=0))) if len(inputs) else 0.0
        output_var = float(np.var(outputs)) if len(outputs) else 0.0
        return cls(
            log_lengthscale=np.log(max(spread, LENGTHSCALE_FLOOR)),
            log_signal_var=np.log(max(output_var, SIGNAL_VAR_FLOOR)),
            log_noise_var=np.log(max(0.1 * output_var, NOISE_VAR_FLOOR)),
        )


@dataclass(frozen=True)
class GPDataView:
    """Inputs and outputs seen by one expert, with the minibatch tempering power."""

    inputs: np.ndarray
    outputs: np.ndarray
    temper_power: float = 1.0

    def __post_init__(self):
        inputs = as_points(self.inputs)
        outputs = np.asarray(self.outputs, dtype=float).ravel()
        if len(inputs) != len(outputs):
            raise InputError(
                f"inputs and outputs differ in length ({len(inputs)} != {len(outputs)})."
            )
        if not self.temper_power >= 1.0:
            raise InputError(f"temper_power must be >= 1, got {self.temper_power}.")
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'outputs', outputs)
        object.__setattr__(self, 'temper_power', float(self.temper_power))

    @property
    def size(self):
        return len(self.outputs)

    @property
    def dim(self):
        return self.inputs.shape[1]


@dataclass(frozen=True)
class PredictiveGaussian:
    """Marginal predictive mean and variance (noise included) per test point."""

    mean: np.ndarray
    variance: np.ndarray

    def logpdf(self, outputs):
        return norm.logpdf(np.asarray(outputs, dtype=float), self.mean, np.sqrt(self.variance))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 100
    grad_tol: float = 1e-4
    bounds: tuple = ((-12.0, 12.0), (-20.0, 20.0), (-25.0, 12.0))


@dataclass
class OptimizerStats:
    """Tally of gradient-optimizer work; warm starts are judged by these counts."""

    runs: int = 0
    iterations: int = 0
    evaluations: int = 0

    def record(self, iterations, evaluations):
        self.runs += 1
        self.iterations += int(iterations)
        self.evaluations += int(evaluations)

    def merge(self, other):
        self.runs += other.runs
        self.iterations += other.iterations
        self.evaluations += other.evaluations

    def reset(self):
        self.runs = self.iterations = self.evaluations = 0


def rbf_covariance(X1, X2, theta):
    """Squared-exponential covariance ``sf2 * exp(-|x - x'|^2 / (2 l^2))``."""
    X1 = as_points(X1)
    X2 = as_points(X2)
    if X1.shape[1] != X2.shape[1]:
        raise InputError(f"Point dimensions differ ({X1.shape[1]} != {X2.shape[1]}).")
    sqdist = cdist(X1, X2, 'sqeuclidean')
    return theta.signal_var * np.exp(-0.5 * sqdist / theta.lengthscale ** 2)


def _factorize(matrix):
    scale = float(np.mean(np.diag(matrix)))
    attempted = []
    for multiple in (0.0,) + JITTER_LADDER:
        jitter = multiple * scale
        candidate = matrix + jitter * np.eye(len(matrix)) if jitter else matrix
        try:
            factor = cho_factor(candidate, lower=True)
        except (LinAlgError, ValueError):
            attempted.append(jitter)
            continue
        if jitter:
            logger.debug(f"Cholesky needed jitter {jitter:.3e} (tried {attempted})")
        return factor
    raise NumericalError(
        f"Cholesky factorization failed after jitter levels {attempted}",
        jitter_levels=attempted,
    )


def _require_data(data):
    if data.size == 0:
        raise InputError("Gaussian-process data must be non-empty.")


def _value_and_gradient(data, theta, with_gradient=True):
    _require_data(data)
    X, y, n = data.inputs, data.outputs, data.size
    sqdist = cdist(X, X, 'sqeuclidean')
    K = theta.signal_var * np.exp(-0.5 * sqdist / theta.lengthscale ** 2)
    factor = _factorize(K + theta.noise_var * np.eye(n))
    alpha = cho_solve(factor, y)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    value = -0.5 * y @ alpha - 0.5 * log_det - 0.5 * n * LOG_2PI
    if not with_gradient:
        return data.temper_power * value, None

    # d lml / d theta_i = 1/2 tr((alpha alpha^T - Ky^-1) dKy/dtheta_i)
    W = np.outer(alpha, alpha) - cho_solve(factor, np.eye(n))
    gradient = 0.5 * np.array([
        np.sum(W * K * sqdist) / theta.lengthscale ** 2,
        np.sum(W * K),
        theta.noise_var * np.trace(W),
    ])
    return data.temper_power * value, data.temper_power * gradient


def log_marginal_likelihood(data, theta):
    """Tempered log marginal likelihood ``temper * log N(y; 0, K + s2 I)``."""
    value, _ = _value_and_gradient(data, theta, with_gradient=False)
    return float(value)


def lml_gradient(data, theta):
    """Gradient of the tempered marginal likelihood in the log parameters."""
    _, gradient = _value_and_gradient(data, theta)
    return gradient


def optimize_hyperparams(data, theta_init, opts, stats=None):
    """
    Maximize the tempered marginal likelihood with bounded L-BFGS-B.

    Returns ``(theta, value)``. The objective never drops below its value at
    ``theta_init``: if the optimizer ends somewhere worse the start is kept.
    """
    if opts.max_iters < 1:
        raise InputError(f"max_iters must be >= 1, got {opts.max_iters}.")
    initial_value, initial_gradient = _value_and_gradient(data, theta_init)
    if not np.isfinite(initial_value) or not np.all(np.isfinite(initial_gradient)):
        raise InputError(f"Objective is not finite at the initial hyperparameters {theta_init}.")
    if np.max(np.abs(initial_gradient)) < opts.grad_tol:
        if stats is not None:
            stats.record(0, 1)
        return theta_init, float(initial_value)

    def objective(params):
        try:
            value, gradient = _value_and_gradient(data, KernelHyperparams.from_array(params))
        except NumericalError:
            return np.inf, np.zeros(3)
        if not np.isfinite(value):
            return np.inf, np.zeros(3)
        return -value, -gradient

    start = np.clip(theta_init.as_array(), *np.array(opts.bounds).T)
    result = minimize(
        objective,
        start,
        jac=True,
        method='L-BFGS-B',
        bounds=opts.bounds,
        options={'maxiter': opts.max_iters, 'gtol': opts.grad_tol},
    )
    if stats is not None:
        stats.record(result.nit, result.nfev)

    value = -float(result.fun)
    if not np.isfinite(value) or value < initial_value:
        return theta_init, float(initial_value)
    return KernelHyperparams.from_array(result.x), value


def gp_predict(train, theta, Xtest):
    """Posterior predictive of a zero-mean GP at ``Xtest``; tempering is not applied."""
    _require_data(train)
    Xtest = as_points(Xtest)
    if Xtest.shape[1] != train.dim:
        raise InputError(f"Test points have dimension {Xtest.shape[1]}, expected {train.dim}.")
    K = rbf_covariance(train.inputs, train.inputs, theta)
    factor = _factorize(K + theta.noise_var * np.eye(train.size))
    alpha = cho_solve(factor, train.outputs)
    K_star = rbf_covariance(train.inputs, Xtest, theta)
    mean = K_star.T @ alpha
    v = solve_triangular(factor[0], K_star, lower=True)
    variance = theta.signal_var + theta.noise_var - np.sum(v ** 2, axis=0)
    return PredictiveGaussian(mean=mean, variance=np.maximum(variance, theta.noise_var))
