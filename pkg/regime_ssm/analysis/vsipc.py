"""
Structured variational inference for the switching model.

The posterior is approximated by ``q(s) q(x)`` with a Markov chain over regimes
and a Gauss-Markov chain over latents. Each iteration runs a Kalman filter and
RTS smoother under regime-weighted parameters (continuous step), then
forward-backward over per-step regime potentials (discrete step), and tracks
the evidence lower bound until it stops moving.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from ..core.hmm import RegimePosteriors, forward_backward
from ..core.kalman import (
    LOG_2PI,
    GaussianState,
    SmoothedTrajectory,
    log_det_from_cholesky,
    predict,
    robust_cholesky,
    rts_smooth,
    run_filter_bank,
    update,
)
from ..core.model import (
    PSD_FLOOR,
    RegimeParams,
    SwitchingModel,
    ensure_valid,
    floor_psd,
    resolve_controls,
    sample_trajectory,
    symmetrize,
)
from ..errors import NumericalError
from ..utils.config import (
    ContinuousUpdate,
    DiscreteUpdate,
    GammaInit,
    InferenceConfig,
)

log = logging.getLogger(__name__)

@dataclass(frozen=True)
class BankPass:
    """
    Output of the pre-loop K-filter bank.

    Each step filters every regime from a shared prior that is the
    moment-matched collapse of the previous step's regime filters.

    Attributes:
        log_lik: T x K innovation log-likelihoods
        innovations: T x K x m innovations ``y_t - C_s x_{t|t-1}``
        filtered_means: T x K x n per-regime filtered means
        filtered_covs: T x K x n x n per-regime filtered covariances
        collapsed_means: T x n mixture-collapsed filtered means
        collapsed_covs: T x n x n mixture-collapsed filtered covariances
        regime_weights: T x K filtered regime probabilities
    """

    log_lik: np.ndarray
    innovations: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    collapsed_means: np.ndarray
    collapsed_covs: np.ndarray
    regime_weights: np.ndarray


@dataclass(frozen=True)
class VariationalResult:
    posteriors: RegimePosteriors
    smoothed: SmoothedTrajectory
    elbo_trace: Tuple[float, ...]
    iterations: int
    converged: bool
    bank: BankPass
    potentials: np.ndarray = field(repr=False)
    exact_fallbacks: int = 0

    @property
    def smoothed_states(self) -> List[GaussianState]:
        return self.smoothed.states

    @property
    def lag_one_cov(self) -> np.ndarray:
        return self.smoothed.lag_one_cov

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1]


@dataclass(frozen=True)
class _RegimeCache:
    """Inverses, log-determinants and products reused by every potential."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_inv: np.ndarray
    R_inv: np.ndarray
    log_det_Q: float
    log_det_R: float
    Q_inv_A: np.ndarray
    At_Q_inv_A: np.ndarray
    R_inv_C: np.ndarray
    Ct_R_inv_C: np.ndarray

    @classmethod
    def build(cls, regime: RegimeParams) -> "_RegimeCache":
        A, C = regime.transition_A, regime.observation_C
        Q = floor_psd(regime.process_noise_Q, PSD_FLOOR)
        R = floor_psd(regime.observation_noise_R, PSD_FLOOR)
        q_factor, Q = robust_cholesky(Q, "process noise")
        r_factor, R = robust_cholesky(R, "observation noise")
        Q_inv = symmetrize(cho_solve(q_factor, np.eye(Q.shape[0])))
        R_inv = symmetrize(cho_solve(r_factor, np.eye(R.shape[0])))
        Q_inv_A = Q_inv @ A
        R_inv_C = R_inv @ C
        return cls(
            A=A,
            C=C,
            Q=Q,
            R=R,
            Q_inv=Q_inv,
            R_inv=R_inv,
            log_det_Q=log_det_from_cholesky(q_factor),
            log_det_R=log_det_from_cholesky(r_factor),
            Q_inv_A=Q_inv_A,
            At_Q_inv_A=symmetrize(A.T @ Q_inv_A),
            R_inv_C=R_inv_C,
            Ct_R_inv_C=symmetrize(C.T @ R_inv_C),
        )


def _regime_caches(model: SwitchingModel) -> List[_RegimeCache]:
    return [_RegimeCache.build(regime) for regime in model.regimes]


def effective_params(
    gamma_t: np.ndarray,
    regimes: Sequence[RegimeParams],
    P_prev_smoothed: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moment-matched single-regime dynamics for one step.

    ``A_eff = sum_s gamma_s A_s`` and ``Q_eff = sum_s gamma_s Q_s`` plus the
    spread of the regime transitions around ``A_eff`` under ``P_prev_smoothed``.

    Returns:
        (A_eff, Q_eff) with Q_eff symmetrised and eigenvalue-floored
    """
    gamma_t = np.asarray(gamma_t, dtype=float)
    if gamma_t.shape != (len(regimes),):
        raise ValueError("gamma_t must have one entry per regime")
    A_stack = np.stack([r.transition_A for r in regimes])
    Q_stack = np.stack([r.process_noise_Q for r in regimes])
    A_eff = np.einsum("s,sij->ij", gamma_t, A_stack)
    spread = A_stack - A_eff
    Q_eff = np.einsum("s,sij->ij", gamma_t, Q_stack) + np.einsum(
        "s,sij,jk,slk->il", gamma_t, spread, P_prev_smoothed, spread
    )
    return A_eff, floor_psd(Q_eff, PSD_FLOOR)


def _stacked(caches: Sequence[_RegimeCache], name: str) -> np.ndarray:
    return np.stack([getattr(c, name) for c in caches])


def _information_transitions(
    gamma: np.ndarray, caches: Sequence[_RegimeCache]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact Gaussian factors of ``E_gamma[log N(x_t; A_s x_{t-1} + u, Q_s)]``.

    ``gamma`` holds one row of regime weights per step. Returns stacked
    ``(A_tilde, Q_tilde, D)``: each factor is ``N(x_t; A_tilde x_{t-1} + u,
    Q_tilde)`` times ``exp(-x_{t-1}^T D x_{t-1} / 2)``.
    """
    J = np.einsum("ts,sij->tij", gamma, _stacked(caches, "Q_inv"))
    JA = np.einsum("ts,sij->tij", gamma, _stacked(caches, "Q_inv_A"))
    AJA = np.einsum("ts,sij->tij", gamma, _stacked(caches, "At_Q_inv_A"))
    J = 0.5 * (J + J.transpose(0, 2, 1))
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("mixed process precision is not positive definite") from exc
    Q_tilde = np.linalg.inv(J)
    Q_tilde = 0.5 * (Q_tilde + Q_tilde.transpose(0, 2, 1))
    A_tilde = np.linalg.solve(J, JA)
    D = AJA - JA.transpose(0, 2, 1) @ A_tilde
    return A_tilde, Q_tilde, 0.5 * (D + D.transpose(0, 2, 1))


def _information_update(
    predicted: GaussianState,
    precision: np.ndarray,
    shift: np.ndarray,
    time_index: int,
) -> GaussianState:
    """
    Multiply ``predicted`` by ``exp(-x^T precision x / 2 + shift^T x)``.

    The regime-weighted observation terms and the transition penalty enter
    through ``precision`` and ``shift`` only, so the update stays n x n
    whatever the number of regimes.
    """
    P = predicted.covariance
    n = P.shape[0]
    try:
        covariance = np.linalg.solve(np.eye(n) + P @ precision, P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "information update is singular", time_index=time_index
        ) from exc
    covariance = floor_psd(covariance, PSD_FLOOR)
    mean = predicted.mean + covariance @ (shift - precision @ predicted.mean)
    return GaussianState(mean, covariance)


def _one_hot(gamma_t: np.ndarray) -> Optional[int]:
    active = np.flatnonzero(gamma_t > 0)
    return int(active[0]) if len(active) == 1 else None


def run_bank_pass(
    model: SwitchingModel,
    observations: np.ndarray,
    controls: np.ndarray,
    max_workers: Optional[int] = None,
) -> BankPass:
    """
    Run the K-filter bank over the whole sequence.

    Every step filters all regimes from a shared Gaussian prior, weights them by
    their filtered regime probabilities and collapses the mixture by moment
    matching to seed the next step. The first step is observed directly from
    ``N(mu0, Sigma0)``.
    """
    Y = observations
    T = Y.shape[0]
    K, n, m = model.K, model.n, model.m
    with np.errstate(divide="ignore"):
        log_P = np.log(model.pi)
        log_weights = np.log(model.initial_regime_dist)

    log_lik = np.empty((T, K))
    innovations = np.empty((T, K, m))
    filtered_means = np.empty((T, K, n))
    filtered_covs = np.empty((T, K, n, n))
    collapsed_means = np.empty((T, n))
    collapsed_covs = np.empty((T, n, n))
    regime_weights = np.empty((T, K))

    prior = GaussianState(model.initial_state_mean, model.initial_state_cov)
    for t in range(T):
        results = run_filter_bank(
            prior, Y[t], controls[t], model, t, predict_first=t > 0, max_workers=max_workers
        )
        for s, result in enumerate(results):
            log_lik[t, s] = result.log_likelihood
            innovations[t, s] = result.innovation
            filtered_means[t, s] = result.updated.mean
            filtered_covs[t, s] = result.updated.covariance

        log_prior = (
            log_weights if t == 0 else logsumexp(log_weights[:, None] + log_P, axis=0)
        )
        joint = log_prior + log_lik[t]
        total = logsumexp(joint)
        if not np.isfinite(total):
            raise NumericalError("filter bank lost all regime mass", time_index=t)
        log_weights = joint - total
        w = np.exp(log_weights)
        regime_weights[t] = w

        mean = w @ filtered_means[t]
        spread = filtered_means[t] - mean
        cov = np.einsum("s,sij->ij", w, filtered_covs[t]) + np.einsum(
            "s,si,sj->ij", w, spread, spread
        )
        cov = floor_psd(cov, PSD_FLOOR)
        collapsed_means[t] = mean
        collapsed_covs[t] = cov
        prior = GaussianState(mean, cov)

    return BankPass(
        log_lik=log_lik,
        innovations=innovations,
        filtered_means=filtered_means,
        filtered_covs=filtered_covs,
        collapsed_means=collapsed_means,
        collapsed_covs=collapsed_covs,
        regime_weights=regime_weights,
    )


def continuous_step(
    model: SwitchingModel,
    gamma: np.ndarray,
    observations: np.ndarray,
    controls: np.ndarray,
    caches: Sequence[_RegimeCache],
    mode: ContinuousUpdate = ContinuousUpdate.EXACT,
    previous_covs: Optional[np.ndarray] = None,
) -> SmoothedTrajectory:
    """
    Filter and smooth under regime marginals ``gamma``.

    ``EXACT`` gives the optimal Gaussian chain for the current ``gamma``: each
    mixed transition becomes an information-weighted transition plus a
    quadratic penalty on the source state, which is folded into that state's
    observation precision. ``EFFECTIVE_PARAMS`` uses :func:`effective_params`
    with ``previous_covs[t-1]`` in the spread term.

    The gamma-weighted observation terms are summed in information form, so a
    step costs the same for any number of regimes.
    """
    Y = observations
    T = Y.shape[0]
    n = model.n
    if mode is ContinuousUpdate.EFFECTIVE_PARAMS and previous_covs is None:
        raise ValueError("EFFECTIVE_PARAMS needs the previous smoothed covariances")

    precision = np.einsum("ts,sij->tij", gamma, _stacked(caches, "Ct_R_inv_C"))
    shift = np.einsum("ts,sji,tj->ti", gamma, _stacked(caches, "R_inv_C"), Y)
    penalised = np.zeros(T, dtype=bool)

    one_hot = [_one_hot(gamma[t]) for t in range(T)]
    transitions: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * T
    mixed = [t for t in range(1, T) if one_hot[t] is None]
    for t in range(1, T):
        if one_hot[t] is not None:
            cache = caches[one_hot[t]]
            transitions[t] = (cache.A, cache.Q)
    if mixed and mode is ContinuousUpdate.EXACT:
        try:
            A_tilde, Q_tilde, D = _information_transitions(gamma[mixed], caches)
        except NumericalError as exc:
            raise exc.with_context(time_index=mixed[0]) from exc
        for i, t in enumerate(mixed):
            transitions[t] = (A_tilde[i], Q_tilde[i])
            precision[t - 1] += D[i]
            penalised[t - 1] = True
    elif mixed:
        for t in mixed:
            transitions[t] = effective_params(
                gamma[t], model.regimes, previous_covs[t - 1]
            )

    pairs: List[Tuple[GaussianState, GaussianState]] = []
    state = GaussianState(model.initial_state_mean, model.initial_state_cov)
    for t in range(T):
        if t > 0:
            A, Q = transitions[t]
            state = predict(state, A, Q, controls[t])
        predicted = state
        s = one_hot[t]
        if s is not None and not penalised[t]:
            state = update(predicted, Y[t], caches[s].C, caches[s].R, t).updated
        else:
            state = _information_update(predicted, precision[t], shift[t], t)
        pairs.append((predicted, state))

    A_per_step = [np.eye(n)] + [transitions[t][0] for t in range(1, T)]
    return rts_smooth(pairs, A_per_step)


def expected_potentials(
    model: SwitchingModel,
    smoothed: SmoothedTrajectory,
    observations: np.ndarray,
    controls: np.ndarray,
    caches: Optional[Sequence[_RegimeCache]] = None,
) -> np.ndarray:
    """
    ``phi[t, s] = E_q(x)[log N(y_t; C_s x_t, R_s) + log N(x_t; A_s x_{t-1} + u_t, Q_s)]``.

    The transition term is absent at t = 0. Expectations are closed-form in
    the smoothed means, covariances and lag-one cross-covariances.

    Returns:
        T x K array
    """
    caches = caches or _regime_caches(model)
    X = smoothed.means
    P = smoothed.covariances
    M = smoothed.lag_one_cov
    Y = observations
    T = Y.shape[0]
    n, m = model.n, model.m
    phi = np.empty((T, model.K))
    for s, c in enumerate(caches):
        resid = Y - X @ c.C.T
        obs = (
            m * LOG_2PI
            + c.log_det_R
            + np.einsum("ti,ij,tj->t", resid, c.R_inv, resid)
            + np.einsum("tij,ij->t", P, c.Ct_R_inv_C)
        )
        phi[:, s] = -0.5 * obs
        if T > 1:
            drift = X[1:] - X[:-1] @ c.A.T - controls[1:]
            trans = (
                n * LOG_2PI
                + c.log_det_Q
                + np.einsum("ti,ij,tj->t", drift, c.Q_inv, drift)
                + np.einsum("tij,ij->t", P[1:], c.Q_inv)
                - 2.0 * np.einsum("tij,ij->t", M[1:], c.Q_inv_A)
                + np.einsum("tij,ij->t", P[:-1], c.At_Q_inv_A)
            )
            phi[1:, s] -= 0.5 * trans
    return phi


def smoothed_innovation_potentials(
    model: SwitchingModel,
    smoothed: SmoothedTrajectory,
    observations: np.ndarray,
) -> np.ndarray:
    """``log N(y_t; C_s x_{t|T}, C_s P_{t|T} C_s^T + R_s)`` for every t and s."""
    T = observations.shape[0]
    out = np.empty((T, model.K))
    for s, regime in enumerate(model.regimes):
        C = regime.observation_C
        R = floor_psd(regime.observation_noise_R, PSD_FLOOR)
        E = observations - smoothed.means @ C.T
        S = C @ smoothed.covariances @ C.T + R
        S = 0.5 * (S + S.transpose(0, 2, 1))
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            out[:, s] = [
                _innovation_log_density(E[t], S[t], t) for t in range(T)
            ]
            continue
        log_det = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        mahalanobis = np.einsum("ti,ti->t", E, np.linalg.solve(S, E[..., None])[..., 0])
        out[:, s] = -0.5 * (E.shape[1] * LOG_2PI + log_det + mahalanobis)
    return out


def _innovation_log_density(e: np.ndarray, S: np.ndarray, time_index: int) -> float:
    factor, _ = robust_cholesky(S, "smoothed innovation covariance", time_index)
    return -0.5 * (
        len(e) * LOG_2PI + log_det_from_cholesky(factor) + float(e @ cho_solve(factor, e))
    )


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``x * log(y)`` with ``0 * log(0) = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, y, 1.0)), 0.0)


def _floored_log_dets(matrices: np.ndarray) -> np.ndarray:
    """Log-determinants with every eigenvalue raised to at least ``PSD_FLOOR``."""
    sym = 0.5 * (matrices + matrices.transpose(0, 2, 1))
    return np.sum(np.log(np.maximum(np.linalg.eigvalsh(sym), PSD_FLOOR)), axis=1)


def _gaussian_chain_entropy(smoothed: SmoothedTrajectory) -> float:
    """Entropy of the Gauss-Markov chain with the given smoothed moments."""
    T = len(smoothed)
    n = smoothed.means.shape[1]
    P = smoothed.covariances
    M = smoothed.lag_one_cov
    try:
        # Cov(x_t | x_{t+1}) for every t < T-1
        conditional = P[:-1] - M[1:].transpose(0, 2, 1) @ np.linalg.solve(P[1:], M[1:])
    except np.linalg.LinAlgError:
        conditional = np.stack(
            [_conditional_cov(P[t], P[t + 1], M[t + 1], t) for t in range(T - 1)]
        )
    total = float(np.sum(_floored_log_dets(np.concatenate([conditional, P[-1:]]))))
    if not np.isfinite(total):
        raise NumericalError("covariance lost positive definiteness")
    return 0.5 * (T * n * (1.0 + LOG_2PI) + total)


def _conditional_cov(
    P_t: np.ndarray, P_next: np.ndarray, M_next: np.ndarray, time_index: int
) -> np.ndarray:
    factor, _ = robust_cholesky(P_next, "smoothed covariance", time_index + 1)
    return P_t - M_next.T @ cho_solve(factor, M_next)


def _initial_state_term(model: SwitchingModel, smoothed: SmoothedTrajectory) -> float:
    """``E_q[log N(x_1; mu0, Sigma0)]``."""
    factor, _ = robust_cholesky(
        floor_psd(model.initial_state_cov, PSD_FLOOR), "initial state covariance"
    )
    d = smoothed.means[0] - model.initial_state_mean
    trace = float(np.trace(cho_solve(factor, smoothed.covariances[0])))
    return -0.5 * (
        model.n * LOG_2PI
        + log_det_from_cholesky(factor)
        + float(d @ cho_solve(factor, d))
        + trace
    )


def _elbo_from_potentials(
    model: SwitchingModel,
    posteriors: RegimePosteriors,
    smoothed: SmoothedTrajectory,
    phi: np.ndarray,
) -> float:
    gamma, xi = posteriors.gamma, posteriors.xi
    expected = float(np.sum(gamma * phi)) + _initial_state_term(model, smoothed)
    chain_prior = float(np.sum(_xlogy(gamma[0], model.initial_regime_dist)))
    if xi.shape[0]:
        chain_prior += float(np.sum(_xlogy(xi, np.broadcast_to(model.pi, xi.shape))))
    return (
        expected
        + chain_prior
        + _gaussian_chain_entropy(smoothed)
        + posteriors.entropy()
    )


def elbo(
    model: SwitchingModel,
    posteriors: RegimePosteriors,
    smoothed: SmoothedTrajectory,
    observations: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> float:
    """
    Evidence lower bound of ``q(s) q(x)``.

    Sums the expected complete-data log-likelihood (observations, latent
    dynamics, initial state and regime chain) with the entropies of both
    factors. The latent entropy is that of the full Markov-Gaussian joint and
    uses the lag-one covariances; the regime entropy comes from gamma and xi.

    Args:
        model: switching model
        posteriors: regime chain marginals
        smoothed: latent chain moments
        observations: T x m
        controls: optional control inputs

    Returns:
        float: the bound
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    if posteriors.gamma.shape != (T, model.K) or len(smoothed) != T:
        raise ValueError("posteriors, smoothed states and observations disagree on T or K")
    U = resolve_controls(model, controls, T)
    phi = expected_potentials(model, smoothed, Y, U)
    return _elbo_from_potentials(model, posteriors, smoothed, phi)


def _initial_gamma(model: SwitchingModel, T: int, mode: GammaInit) -> np.ndarray:
    if mode is GammaInit.UNIFORM:
        return np.full((T, model.K), 1.0 / model.K)
    return np.tile(model.initial_regime_dist, (T, 1))


def _ascent_step(
    model: SwitchingModel,
    gamma: np.ndarray,
    Y: np.ndarray,
    U: np.ndarray,
    caches: Sequence[_RegimeCache],
    continuous: ContinuousUpdate = ContinuousUpdate.EXACT,
    discrete=DiscreteUpdate.EXPECTED_LOGLIK,
    previous_covs: Optional[np.ndarray] = None,
) -> Tuple[SmoothedTrajectory, RegimePosteriors, np.ndarray, float]:
    """
    One continuous step, one discrete step and the bound they reach.

    ``discrete`` is a :class:`DiscreteUpdate` or a ready T x K potential array.
    """
    smoothed = continuous_step(model, gamma, Y, U, caches, continuous, previous_covs)
    phi = expected_potentials(model, smoothed, Y, U, caches)
    if isinstance(discrete, np.ndarray):
        potentials = discrete
    elif discrete is DiscreteUpdate.SMOOTHED_INNOVATION:
        potentials = smoothed_innovation_potentials(model, smoothed, Y)
    else:
        potentials = phi
    posteriors = forward_backward(potentials, model.pi, model.initial_regime_dist)
    value = _elbo_from_potentials(model, posteriors, smoothed, phi)
    return smoothed, posteriors, phi, value


def infer(
    model: SwitchingModel,
    observations: np.ndarray,
    controls: Optional[np.ndarray] = None,
    config: Optional[InferenceConfig] = None,
) -> VariationalResult:
    """
    Run coordinate-ascent variational inference over one batch.

    Regime marginals start at the initial distribution for every step (or
    uniform), the K-filter bank supplies the first discrete step's potentials,
    and each later iteration recomputes potentials from the current latent
    posterior. Iteration stops once the bound changes by at most
    ``tolerance_epsilon`` or after ``k_max`` iterations.

    The alternative continuous and discrete updates can lower the bound; an
    iteration where they do is recomputed with the exact pair and counted in
    ``exact_fallbacks``, so the trace never decreases.

    Args:
        model: switching model
        observations: T x m observations
        controls: optional T x n (or length-n) control inputs
        config: inference settings

    Returns:
        VariationalResult

    Raises:
        ValueError: on an empty or mis-shaped batch
        ModelValidationError: for an invalid model
        NumericalError: with time, regime and iteration context when a step fails
    """
    config = config or InferenceConfig()
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    if T < 1 or Y.size == 0:
        raise ValueError("need at least one observation")
    ensure_valid(model)
    if Y.shape[1] != model.m:
        raise ValueError(f"observations have {Y.shape[1]} columns, model expects {model.m}")
    U = resolve_controls(model, controls, T)
    caches = _regime_caches(model)

    bank = run_bank_pass(model, Y, U, config.bank_workers)
    gamma = _initial_gamma(model, T, config.gamma_init)
    previous_covs = bank.collapsed_covs

    exact_updates = (
        config.continuous_update is ContinuousUpdate.EXACT
        and config.discrete_update is DiscreteUpdate.EXPECTED_LOGLIK
    )
    trace: List[float] = []
    last = -np.inf
    converged = False
    fallbacks = 0
    posteriors: Optional[RegimePosteriors] = None
    smoothed: Optional[SmoothedTrajectory] = None
    phi = bank.log_lik
    for k in range(1, config.k_max + 1):
        try:
            smoothed, posteriors, phi, value = _ascent_step(
                model,
                gamma,
                Y,
                U,
                caches,
                config.continuous_update,
                bank.log_lik if k == 1 else config.discrete_update,
                previous_covs,
            )
            if value < last and not exact_updates:
                # only the exact pair is guaranteed not to lower the bound
                log.debug(
                    "iteration %d: bound fell by %.3g, redoing with exact updates",
                    k,
                    last - value,
                )
                smoothed, posteriors, phi, value = _ascent_step(
                    model, gamma, Y, U, caches
                )
                fallbacks += 1
        except NumericalError as exc:
            log.error("inference failed at iteration %d: %s", k, exc)
            raise exc.with_context(iteration=k) from exc
        if not np.isfinite(value):
            log.error("non-finite bound at iteration %d", k)
            raise NumericalError("non-finite evidence lower bound", iteration=k)

        trace.append(value)
        gamma = posteriors.gamma
        previous_covs = smoothed.covariances
        log.debug("iteration %d: bound %.6f", k, value)
        if abs(value - last) <= config.tolerance_epsilon:
            converged = True
            break
        last = value

    if not converged:
        log.warning(
            "no convergence after %d iterations (last change %.3g)",
            config.k_max,
            trace[-1] - trace[-2] if len(trace) > 1 else float("nan"),
        )
    return VariationalResult(
        posteriors=posteriors,
        smoothed=smoothed,
        elbo_trace=tuple(trace),
        iterations=len(trace),
        converged=converged,
        bank=bank,
        potentials=phi,
        exact_fallbacks=fallbacks,
    )


def measure_iteration_scaling(
    model: SwitchingModel,
    lengths: Sequence[int] = (1000, 2000, 4000),
    seed: int = 0,
    repeats: int = 3,
) -> Dict[int, float]:
    """
    Wall time in seconds of one coordinate-ascent iteration at each length.

    One iteration is the continuous step, the potentials, forward-backward and
    the bound. Each entry is the best of ``repeats`` runs.
    """
    caches = _regime_caches(model)
    timings: Dict[int, float] = {}
    for T in lengths:
        Y = sample_trajectory(model, T, seed).observations
        U = resolve_controls(model, None, T)
        gamma = _initial_gamma(model, T, GammaInit.UNIFORM)
        best = np.inf
        for _ in range(repeats):
            start = time.perf_counter()
            _ascent_step(model, gamma, Y, U, caches)
            best = min(best, time.perf_counter() - start)
        timings[T] = best
        log.info("T=%d: %.3fs per iteration", T, best)
    return timings
