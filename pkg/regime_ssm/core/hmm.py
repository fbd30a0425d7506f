"""
Discrete regime posteriors: scaled forward-backward and k-step regime prediction.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import NumericalError

log = logging.getLogger(__name__)

# exp() argument cap for backward ratios; keeps inf * 0 out of the products
_MAX_EXP = 700.0


@dataclass(frozen=True)
class RegimePosteriors:
    """
    Attributes:
        gamma: T x K smoothed marginals ``P(s_t | y)``
        xi: (T-1) x K x K pairwise marginals, ``xi[t-1, i, j] = P(s_{t-1}=i, s_t=j | y)``
        log_evidence: log normaliser of the chain given the per-step potentials
    """

    gamma: np.ndarray
    xi: np.ndarray
    log_evidence: float

    @property
    def T(self) -> int:
        return self.gamma.shape[0]

    def entropy_prefix(self) -> np.ndarray:
        """Entropy of the chain posterior restricted to steps ``1..t``, for every t."""
        g0 = self.gamma[0]
        h0 = -float(np.sum(np.where(g0 > 0, g0 * np.log(np.where(g0 > 0, g0, 1.0)), 0.0)))
        out = np.empty(self.T)
        out[0] = h0
        if self.T > 1:
            prev = self.gamma[:-1, :, None]
            cond = np.where(self.xi > 0, self.xi / np.where(prev > 0, prev, 1.0), 1.0)
            terms = np.where(self.xi > 0, self.xi * np.log(cond), 0.0)
            out[1:] = h0 - np.cumsum(terms.sum(axis=(1, 2)))
        return out

    def entropy(self) -> float:
        """Entropy of the whole chain posterior ``q(s_{1:T})``."""
        return float(self.entropy_prefix()[-1])


def _as_probabilities(matrix) -> np.ndarray:
    return np.asarray(matrix, dtype=float)


def forward_backward(
    log_lik: np.ndarray, transition, initial: np.ndarray
) -> RegimePosteriors:
    """
    Scaled forward-backward over per-step regime log-potentials.

    Each step's potentials are shifted by their maximum before exponentiation
    and the forward messages are renormalised every step. A step whose scaled
    mass underflows to zero is recomputed in log space.

    Args:
        log_lik: T x K log-potentials
        transition: K x K row-stochastic matrix (array or TransitionMatrix)
        initial: length-K initial regime distribution

    Returns:
        RegimePosteriors

    Raises:
        ValueError: on shape mismatch
        NumericalError: if a step has zero probability under every regime
    """
    log_lik = np.atleast_2d(np.asarray(log_lik, dtype=float))
    P = _as_probabilities(transition)
    pi0 = np.asarray(initial, dtype=float)
    T, K = log_lik.shape
    if P.shape != (K, K) or pi0.shape != (K,):
        raise ValueError("log_lik, transition and initial disagree on K")
    if T < 1:
        raise ValueError("need at least one step")
    if np.any(np.isnan(log_lik)):
        raise NumericalError("NaN regime log-likelihood", time_index=int(np.argwhere(np.isnan(log_lik))[0, 0]))

    shift = log_lik.max(axis=1)
    if not np.all(np.isfinite(shift)):
        bad = int(np.argmax(~np.isfinite(shift)))
        raise NumericalError("no regime explains the observation", time_index=bad)
    scaled = np.exp(log_lik - shift[:, None])
    with np.errstate(divide="ignore"):
        log_P = np.log(P)

    alpha = np.empty((T, K))
    log_c = np.empty(T)
    for t in range(T):
        prior = pi0 if t == 0 else alpha[t - 1] @ P
        unnorm = scaled[t] * prior
        total = unnorm.sum()
        if total > 0 and np.isfinite(total):
            alpha[t] = unnorm / total
            log_c[t] = np.log(total)
            continue
        # log-space recovery
        if t == 0:
            with np.errstate(divide="ignore"):
                log_prior = np.log(pi0)
        else:
            with np.errstate(divide="ignore"):
                log_prev = np.log(alpha[t - 1])
            log_prior = logsumexp(log_prev[:, None] + log_P, axis=0)
        log_unnorm = (log_lik[t] - shift[t]) + log_prior
        log_total = logsumexp(log_unnorm)
        if not np.isfinite(log_total):
            raise NumericalError("forward pass lost all probability mass", time_index=t)
        log.debug("forward step %d recovered in log space", t)
        alpha[t] = np.exp(log_unnorm - log_total)
        log_c[t] = log_total

    ratios = np.exp(np.minimum(log_lik - shift[:, None] - log_c[:, None], _MAX_EXP))
    beta = np.ones((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = P @ (ratios[t + 1] * beta[t + 1])

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    joint = alpha[:-1, :, None] * P[None, :, :] * (ratios[1:] * beta[1:])[:, None, :]
    xi = joint / joint.sum(axis=(1, 2), keepdims=True)

    log_evidence = float(np.sum(log_c + shift))
    return RegimePosteriors(gamma=gamma, xi=xi, log_evidence=log_evidence)


def predict_regime(gamma_t: np.ndarray, transition, tau: int) -> np.ndarray:
    """
    Propagate a regime distribution ``tau`` steps ahead: ``(P^T)^tau gamma_t``.

    Raises:
        ValueError: if tau < 1
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    P = _as_probabilities(transition)
    dist = np.asarray(gamma_t, dtype=float)
    for _ in range(tau):
        dist = P.T @ dist
    return dist / dist.sum()
