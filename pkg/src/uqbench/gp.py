"""Exact Gaussian process regression with an ARD squared-exponential kernel.

Hyperparameters are optimized in log space by multi-start Adam on the
negative log marginal likelihood.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri

from .errors import AllStartsFailed, CholeskyFailure, DimensionMismatch
from .posterior import Posterior

log = logging.getLogger(__name__)

# Relative to theta_sigma; tried in order until the factorization succeeds.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
NOISE_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GPHyperparams:
    theta_sigma: float
    theta: np.ndarray
    sigma_n: float

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", theta)
        if not (self.theta_sigma > 0 and self.sigma_n > 0 and (theta > 0).all()):
            raise ValueError("GP hyperparameters must be strictly positive")

    @property
    def dim(self):
        return len(self.theta)

    def to_log(self):
        return np.concatenate([[np.log(self.theta_sigma)], np.log(self.theta), [np.log(self.sigma_n)]])

    @classmethod
    def from_log(cls, p):
        p = np.asarray(p, dtype=float)
        return cls(float(np.exp(p[0])), np.exp(p[1:-1]), float(np.exp(p[-1])))

    def __eq__(self, other):
        if not isinstance(other, GPHyperparams):
            return NotImplemented
        return np.array_equal(self.to_log(), other.to_log())


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 8
    iterations: int = 2000
    learning_rate: float = 1e-2
    seed: int = 0
    grad_tol: float = 1e-7
    # stop once the NLL has improved by less than this (relative) over ``patience`` steps
    ftol: float = 1e-10
    patience: int = 50

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 0 or not self.learning_rate > 0:
            raise ValueError("invalid optimizer configuration")


@dataclass(frozen=True, eq=False)
class GPPosteriorState:
    inputs: np.ndarray
    outputs: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0


def _check_dims(a, hp):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != hp.dim:
        raise DimensionMismatch(f"inputs have {a.shape[1]} columns, kernel expects {hp.dim}")
    return a


def kernel_matrix(a1, a2, hp):
    a1 = _check_dims(a1, hp) / hp.theta
    a2 = _check_dims(a2, hp) / hp.theta
    sq = (a1**2).sum(1)[:, None] + (a2**2).sum(1)[None, :] - 2.0 * a1 @ a2.T
    return hp.theta_sigma * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel(a1, a2, hp):
    """Covariance between two single input vectors."""
    d = (np.asarray(a1, dtype=float) - np.asarray(a2, dtype=float)) / hp.theta
    if d.shape != hp.theta.shape:
        raise DimensionMismatch("input length does not match the length scales")
    return float(hp.theta_sigma * np.exp(-0.5 * d @ d))


def _factor(K, hp):
    """Cholesky of K + sigma_n^2 I, escalating jitter on failure."""
    n = len(K)
    C = K + hp.sigma_n**2 * np.eye(n)
    for jitter in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(C + jitter * hp.theta_sigma * np.eye(n)) if jitter else np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(L).all():
            return L, jitter
    raise CholeskyFailure("covariance not positive definite even with jitter 1e-6")


def _pairwise_sq(A):
    """Squared coordinate differences, shape ``(d, n, n)``."""
    return (A.T[:, :, None] - A.T[:, None, :]) ** 2


def _nll_core(hp, D, Y, with_grad):
    n = len(Y)
    K = hp.theta_sigma * np.exp(-0.5 * np.tensordot(1.0 / hp.theta**2, D, axes=1))
    L, _ = _factor(K, hp)
    alpha = cho_solve((L, True), Y)
    value = 0.5 * Y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * LOG_2PI
    if not with_grad:
        return value
    inv, info = dpotri(L, lower=1)
    if info != 0:
        raise CholeskyFailure("inverse from Cholesky factor failed")
    inv = np.tril(inv) + np.tril(inv, -1).T
    WK = (inv - np.outer(alpha, alpha)) * K
    grad = np.empty(hp.dim + 2)
    grad[0] = 0.5 * WK.sum()
    grad[1:-1] = 0.5 * np.tensordot(D, WK, axes=([1, 2], [0, 1])) / hp.theta**2
    grad[-1] = hp.sigma_n**2 * (np.trace(inv) - alpha @ alpha)
    return value, grad


def nll(hp, A, Y, with_grad=True):
    """Negative log marginal likelihood and its gradient in log-hyperparameters.

    The gradient is ordered ``[log theta_sigma, log theta_1.., log sigma_n]``.
    """
    A = _check_dims(A, hp)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if len(Y) < 1:
        raise ValueError("need at least one training point")
    if len(Y) != len(A):
        raise DimensionMismatch("inputs and outputs disagree on the row count")
    return _nll_core(hp, _pairwise_sq(A), Y, with_grad)


def _initial_points(A, Y, cfg):
    rng = np.random.default_rng(cfg.seed)
    span = np.ptp(A, axis=0)
    span = np.where(span > 0, span, 1.0)
    second = max(float(np.mean(Y**2)), 1e-12)
    std = max(float(np.std(Y)), np.sqrt(second) * 1e-3)
    points = [np.concatenate([[np.log(second)], np.log(span), [np.log(0.1 * std)]])]
    for _ in range(cfg.restarts - 1):
        log_theta = rng.uniform(np.log(0.1 * span), np.log(10.0 * span))
        points.append(
            np.concatenate(
                [
                    [np.log(second) + rng.normal(0.0, 0.5)],
                    log_theta,
                    [np.log(0.1 * std) + rng.normal(0.0, 0.5)],
                ]
            )
        )
    return points


def _adam(p, D, Y, cfg, log_floor):
    """Adam with monotone acceptance: a step that raises the NLL is retried at half the rate."""
    p = p.copy()
    p[-1] = max(p[-1], log_floor)
    f, g = _nll_core(GPHyperparams.from_log(p), D, Y, True)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    lr = cfg.learning_rate
    t = 0
    history = [f]
    for _ in range(cfg.iterations):
        if np.max(np.abs(g)) < cfg.grad_tol or lr < 1e-10 * cfg.learning_rate:
            break
        t += 1
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g**2
        direction = (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        cand = p - lr * direction
        cand[-1] = max(cand[-1], log_floor)
        try:
            fc, gc = _nll_core(GPHyperparams.from_log(cand), D, Y, True)
            ok = np.isfinite(fc) and fc <= f
        except (CholeskyFailure, ValueError, FloatingPointError):
            ok = False
        if ok:
            p, f, g = cand, fc, gc
            lr = min(cfg.learning_rate, lr * 1.2)
            history.append(f)
            if len(history) > cfg.patience:
                if history[-cfg.patience - 1] - f <= cfg.ftol * (1.0 + abs(f)):
                    break
        else:
            lr *= 0.5
    return p, f, history


def posterior_state(hp, A, Y):
    A = _check_dims(A, hp)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    L, jitter = _factor(kernel_matrix(A, A, hp), hp)
    return GPPosteriorState(A.copy(), Y.copy(), L, cho_solve((L, True), Y), jitter)


def fit(A, Y, opt=None):
    """Multi-start NLL minimization; returns the best run's hyperparameters and state."""
    opt = opt or OptimizerConfig()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if len(Y) != len(A) or len(Y) < 1:
        raise DimensionMismatch("inputs and outputs disagree on the row count")
    scale = float(np.std(Y)) if np.std(Y) > 0 else max(float(np.sqrt(np.mean(Y**2))), 1.0)
    log_floor = np.log(NOISE_FLOOR * scale)
    D = _pairwise_sq(A)
    best = None
    for k, p0 in enumerate(_initial_points(A, Y, opt)):
        try:
            p, f, history = _adam(p0, D, Y, opt, log_floor)
        except (CholeskyFailure, FloatingPointError, ValueError) as exc:
            log.debug("restart %d failed: %s", k, exc)
            continue
        log.debug("restart %d: nll %.6g after %d accepted steps", k, f, len(history) - 1)
        if best is None or f < best[1]:
            best = (p, f)
    if best is None:
        raise AllStartsFailed(f"all {opt.restarts} optimizer starts failed")
    hp = GPHyperparams.from_log(best[0])
    return hp, posterior_state(hp, A, Y)


def predict(state, hp, query):
    """Posterior mean, epistemic std and aleatoric std at each query row."""
    query = _check_dims(query, hp)
    Ks = kernel_matrix(state.inputs, query, hp)
    mu = Ks.T @ state.weights
    v = solve_triangular(state.chol, Ks, lower=True)
    var = hp.theta_sigma - (v**2).sum(0)
    return Posterior(mu, np.sqrt(np.maximum(var, 0.0)), np.full(len(mu), hp.sigma_n))


def to_sections(hp, state):
    return {
        "gp_log_hyperparams": hp.to_log(),
        "gp_inputs": state.inputs,
        "gp_outputs": state.outputs,
    }


def from_sections(sections):
    hp = GPHyperparams.from_log(sections["gp_log_hyperparams"])
    return hp, posterior_state(hp, sections["gp_inputs"], sections["gp_outputs"])
