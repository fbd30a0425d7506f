"""
Exact inference by brute force, for small instances only.

:func:`enumerate_exact` filters every regime path and combines the path
likelihoods in log space, giving the K^T-component posterior mixture.
:func:`dense_lds_posterior` conditions the full joint Gaussian of one linear
model directly, with no recursion at all.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from ..core.kalman import rts_smooth, run_filter
from ..core.model import (
    RegimeParams,
    SwitchingModel,
    ensure_valid,
    resolve_controls,
    symmetrize,
)
from ..errors import PathCapExceededError
from .parallel_processing import choose_processing_method

log = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 1_000_000
# per-path smoothed moments are N x T x n x n floats
DEFAULT_MAX_STATE_PATHS = 10_000


@dataclass(frozen=True)
class ExactPosterior:
    """
    Attributes:
        paths: N x T regime paths, N = K^T
        path_log_weights: unnormalised log p(path, y)
        exact_gamma: T x K regime marginals
        exact_xi: (T-1) x K x K pairwise regime marginals
        exact_log_evidence: log p(y)
        state_means, state_covs: per-path smoothed moments (N x T x n [x n]),
            None when not requested
    """

    paths: np.ndarray
    path_log_weights: np.ndarray
    exact_gamma: np.ndarray
    exact_xi: np.ndarray
    exact_log_evidence: float
    state_means: Optional[np.ndarray] = None
    state_covs: Optional[np.ndarray] = None

    @property
    def num_components(self) -> int:
        return self.paths.shape[0]

    @property
    def path_weights(self) -> np.ndarray:
        return np.exp(self.path_log_weights - self.exact_log_evidence)

    def state_marginal(self, t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mixture ``(weights, means, covariances)`` of ``p(x_t | y)``."""
        if self.state_means is None:
            raise ValueError("state marginals were not computed")
        return self.path_weights, self.state_means[:, t], self.state_covs[:, t]

    def state_mean(self, t: int) -> np.ndarray:
        weights, means, _ = self.state_marginal(t)
        return weights @ means


def _path_log_prior(path: Sequence[int], log_pi0: np.ndarray, log_P: np.ndarray) -> float:
    total = log_pi0[path[0]]
    for prev, cur in zip(path[:-1], path[1:]):
        total += log_P[prev, cur]
    return float(total)


def evaluate_paths_chunk(args) -> List[Tuple[int, tuple]]:
    """Filter (and optionally smooth) every regime path in one chunk."""
    (model, Y, U, with_states), paths, start_idx = args
    with np.errstate(divide="ignore"):
        log_pi0 = np.log(model.initial_regime_dist)
        log_P = np.log(model.pi)
    T, n = Y.shape[0], model.n
    results = []
    for i, path in enumerate(paths):
        prior = _path_log_prior(path, log_pi0, log_P)
        if not np.isfinite(prior):
            empty = (np.zeros((T, n)), np.zeros((T, n, n))) if with_states else (None, None)
            results.append((start_idx + i, (-np.inf, *empty)))
            continue
        params = [model.regimes[s] for s in path]
        output = run_filter(
            Y, params, model.initial_state_mean, model.initial_state_cov, U
        )
        means = covs = None
        if with_states:
            smoothed = rts_smooth(output.pairs(), [p.transition_A for p in params])
            means, covs = smoothed.means, smoothed.covariances
        results.append((start_idx + i, (prior + output.log_evidence, means, covs)))
    return results


def enumerate_exact(
    model: SwitchingModel,
    observations: np.ndarray,
    max_paths: int = DEFAULT_MAX_PATHS,
    controls: Optional[np.ndarray] = None,
    with_states: bool = False,
    max_workers: Optional[int] = None,
    max_state_paths: int = DEFAULT_MAX_STATE_PATHS,
) -> ExactPosterior:
    """
    Exact switching posterior by enumerating all K^T regime paths.

    Args:
        model: switching model
        observations: T x m
        max_paths: refuse to run beyond this many paths
        with_states: also keep each path's smoothed state moments
        max_workers: process count for large enumerations (1 = in-process)
        max_state_paths: lower cap that applies when ``with_states`` is set

    Returns:
        ExactPosterior

    Raises:
        PathCapExceededError: if K^T > max_paths, or with_states and
            K^T > max_state_paths
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    if T < 1:
        raise ValueError("need at least one observation")
    num_paths = model.K**T
    if num_paths > max_paths:
        raise PathCapExceededError(num_paths, max_paths)
    if with_states and num_paths > max_state_paths:
        raise PathCapExceededError(num_paths, max_state_paths)
    ensure_valid(model)
    U = resolve_controls(model, controls, T)

    paths = [tuple(p) for p in itertools.product(range(model.K), repeat=T)]
    results = choose_processing_method(
        evaluate_paths_chunk,
        paths,
        (model, Y, U, with_states),
        max_workers=max_workers,
        unit="paths",
    )
    log_weights = np.array([r[0] for r in results])
    log_evidence = float(logsumexp(log_weights))
    weights = np.exp(log_weights - log_evidence)
    path_array = np.array(paths, dtype=int)

    gamma = np.zeros((T, model.K))
    for t in range(T):
        np.add.at(gamma[t], path_array[:, t], weights)
    xi = np.zeros((max(T - 1, 0), model.K, model.K))
    for t in range(1, T):
        np.add.at(xi[t - 1], (path_array[:, t - 1], path_array[:, t]), weights)

    state_means = state_covs = None
    if with_states:
        state_means = np.stack([r[1] for r in results])
        state_covs = np.stack([r[2] for r in results])
    log.debug("enumerated %d paths, log evidence %.6f", num_paths, log_evidence)
    return ExactPosterior(
        paths=path_array,
        path_log_weights=log_weights,
        exact_gamma=gamma,
        exact_xi=xi,
        exact_log_evidence=log_evidence,
        state_means=state_means,
        state_covs=state_covs,
    )


@dataclass(frozen=True)
class DensePosterior:
    """Exact ``p(x_{1:T} | y)`` of a linear-Gaussian model and ``log p(y)``."""

    means: np.ndarray
    covariances: np.ndarray
    joint_cov: np.ndarray
    log_evidence: float

    def cross_cov(self, t: int, s: int) -> np.ndarray:
        """``Cov(x_t, x_s | y)``."""
        n = self.means.shape[1]
        return self.joint_cov[t * n : (t + 1) * n, s * n : (s + 1) * n]


def dense_lds_posterior(
    observations: np.ndarray,
    params: Sequence[RegimeParams],
    initial_mean: np.ndarray,
    initial_cov: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> DensePosterior:
    """
    Condition the joint Gaussian of ``(x_{1:T}, y_{1:T})`` on ``y``.

    ``params[t]`` governs step t; the transition of ``params[0]`` is unused.
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    n = params[0].n
    U = np.zeros((T, n)) if controls is None else np.asarray(controls, dtype=float)

    mean_x = np.empty((T, n))
    cov_x = np.zeros((T * n, T * n))
    mean_x[0] = initial_mean
    cov_x[:n, :n] = initial_cov
    for t in range(1, T):
        A = params[t].transition_A
        mean_x[t] = A @ mean_x[t - 1] + U[t]
        rows = slice(t * n, (t + 1) * n)
        prev = slice((t - 1) * n, t * n)
        # Cov(x_t, x_s) = A Cov(x_{t-1}, x_s) for s < t
        cov_x[rows, : t * n] = A @ cov_x[prev, : t * n]
        cov_x[: t * n, rows] = cov_x[rows, : t * n].T
        cov_x[rows, rows] = A @ cov_x[prev, prev] @ A.T + params[t].process_noise_Q

    C_big = block_diag(*[p.observation_C for p in params])
    R_big = block_diag(*[p.observation_noise_R for p in params])
    mean_y = C_big @ mean_x.ravel()
    cov_y = symmetrize(C_big @ cov_x @ C_big.T + R_big)
    cov_xy = cov_x @ C_big.T

    factor = cho_factor(cov_y, lower=True)
    post_mean = mean_x.ravel() + cov_xy @ cho_solve(factor, Y.ravel() - mean_y)
    post_cov = symmetrize(cov_x - cov_xy @ cho_solve(factor, cov_xy.T))
    log_evidence = float(multivariate_normal(mean_y, cov_y).logpdf(Y.ravel()))

    means = post_mean.reshape(T, n)
    covariances = np.stack(
        [post_cov[t * n : (t + 1) * n, t * n : (t + 1) * n] for t in range(T)]
    )
    return DensePosterior(means, covariances, post_cov, log_evidence)


def dense_switching_evidence(
    model: SwitchingModel,
    observations: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> float:
    """``log p(y)`` as a mixture of dense per-path evidences; independent of filtering."""
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    U = resolve_controls(model, controls, T)
    with np.errstate(divide="ignore"):
        log_pi0 = np.log(model.initial_regime_dist)
        log_P = np.log(model.pi)
    terms = []
    for path in itertools.product(range(model.K), repeat=T):
        prior = _path_log_prior(path, log_pi0, log_P)
        if not np.isfinite(prior):
            continue
        dense = dense_lds_posterior(
            Y,
            [model.regimes[s] for s in path],
            model.initial_state_mean,
            model.initial_state_cov,
            U,
        )
        terms.append(prior + dense.log_evidence)
    return float(logsumexp(terms))
