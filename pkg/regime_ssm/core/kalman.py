"""
Kalman filtering and Rauch-Tung-Striebel smoothing for one regime or a bank of
regimes sharing a prior.

Covariance updates use the Joseph form and innovation covariances go through a
Cholesky factorisation with a single jitter retry.
"""

import concurrent.futures
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import NumericalError
from .model import PSD_FLOOR, RegimeParams, SwitchingModel, floor_psd, symmetrize

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER = 1e-9


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class FilterStepResult:
    """Everything one predict/update cycle produces."""

    predicted: GaussianState
    updated: GaussianState
    innovation: np.ndarray
    innovation_cov: np.ndarray
    gain: np.ndarray
    log_likelihood: float
    mahalanobis: float


def robust_cholesky(
    matrix: np.ndarray,
    what: str = "matrix",
    time_index: Optional[int] = None,
) -> Tuple[Tuple[np.ndarray, bool], np.ndarray]:
    """
    Cholesky-factor a symmetric matrix, retrying once with ``1e-9 * I`` added.

    Returns:
        ((factor, lower), matrix actually factored)

    Raises:
        NumericalError: if both attempts fail
    """
    try:
        return cho_factor(matrix, lower=True), matrix
    except (LinAlgError, ValueError):
        pass
    jittered = matrix + JITTER * np.eye(matrix.shape[0])
    try:
        factor = cho_factor(jittered, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"{what} is not positive definite after jitter", time_index=time_index
        ) from exc
    log.debug("jitter applied to %s at t=%s", what, time_index)
    return factor, jittered


def log_det_from_cholesky(factor: Tuple[np.ndarray, bool]) -> float:
    return float(2.0 * np.sum(np.log(np.diag(factor[0]))))


def predict(
    state: GaussianState,
    A: np.ndarray,
    Q: np.ndarray,
    u: Optional[np.ndarray] = None,
) -> GaussianState:
    """Propagate ``state`` through ``x' = A x + u + w``, ``w ~ N(0, Q)``."""
    mean = A @ state.mean
    if u is not None:
        mean = mean + u
    covariance = symmetrize(A @ state.covariance @ A.T + Q)
    return GaussianState(mean, covariance)


def update(
    predicted: GaussianState,
    y: np.ndarray,
    C: np.ndarray,
    R: np.ndarray,
    time_index: Optional[int] = None,
) -> FilterStepResult:
    """
    Condition ``predicted`` on ``y = C x + v``, ``v ~ N(0, R)``.

    ``R`` is floored at 1e-9 before use. The observation dimension may differ
    from the model's m, which lets callers stack weighted observation models or
    add pseudo-observations.
    """
    R_used = floor_psd(R, PSD_FLOOR)
    P = predicted.covariance
    innovation = y - C @ predicted.mean
    S = symmetrize(C @ P @ C.T + R_used)
    factor, S = robust_cholesky(S, "innovation covariance", time_index)

    gain = cho_solve(factor, C @ P).T
    mean = predicted.mean + gain @ innovation
    I_KC = np.eye(P.shape[0]) - gain @ C
    covariance = I_KC @ P @ I_KC.T + gain @ R_used @ gain.T
    covariance = floor_psd(covariance, PSD_FLOOR)

    mahalanobis = float(innovation @ cho_solve(factor, innovation))
    log_likelihood = -0.5 * (
        len(y) * LOG_2PI + log_det_from_cholesky(factor) + mahalanobis
    )
    if not np.isfinite(log_likelihood):
        raise NumericalError("non-finite innovation likelihood", time_index=time_index)
    return FilterStepResult(
        predicted=predicted,
        updated=GaussianState(mean, covariance),
        innovation=innovation,
        innovation_cov=S,
        gain=gain,
        log_likelihood=log_likelihood,
        mahalanobis=mahalanobis,
    )


def filter_step(
    prior: GaussianState,
    y: np.ndarray,
    u: Optional[np.ndarray],
    params: RegimeParams,
    time_index: Optional[int] = None,
    predict_first: bool = True,
) -> FilterStepResult:
    """
    One predict + update cycle for a single regime.

    With ``predict_first=False`` the prior is treated as already predicted,
    which is how the first step of a sequence is handled.
    """
    predicted = (
        predict(prior, params.transition_A, params.process_noise_Q, u)
        if predict_first
        else prior
    )
    return update(
        predicted, y, params.observation_C, params.observation_noise_R, time_index
    )


def run_filter_bank(
    prior: GaussianState,
    y: np.ndarray,
    u: Optional[np.ndarray],
    model: SwitchingModel,
    time_index: Optional[int] = None,
    predict_first: bool = True,
    max_workers: Optional[int] = None,
) -> List[FilterStepResult]:
    """
    Run :func:`filter_step` for every regime from the shared ``prior``.

    The K filters are independent; ``max_workers`` runs them on a thread pool.
    Failures are re-raised with the offending regime attached.
    """

    def _one(s: int) -> FilterStepResult:
        try:
            return filter_step(
                prior, y, u, model.regimes[s], time_index, predict_first
            )
        except NumericalError as exc:
            raise exc.with_context(time_index=time_index, regime=s) from exc

    if max_workers and max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(_one, range(model.K)))
    return [_one(s) for s in range(model.K)]


@dataclass(frozen=True)
class FilterOutput:
    steps: List[FilterStepResult]
    log_evidence: float

    def pairs(self) -> List[Tuple[GaussianState, GaussianState]]:
        return [(step.predicted, step.updated) for step in self.steps]


def run_filter(
    observations: np.ndarray,
    params: Union[RegimeParams, Sequence[RegimeParams]],
    initial_mean: np.ndarray,
    initial_cov: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> FilterOutput:
    """
    Filter a whole sequence through a (possibly time-varying) linear model.

    ``x_1 ~ N(initial_mean, initial_cov)`` is observed directly; dynamics apply
    from the second step on.

    Args:
        observations: T x m array
        params: one RegimeParams, or one per step
        controls: optional T x n control inputs

    Returns:
        FilterOutput with per-step results and the summed log evidence
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T = Y.shape[0]
    if T < 1:
        raise ValueError("need at least one observation")
    per_step = [params] * T if isinstance(params, RegimeParams) else list(params)
    if len(per_step) != T:
        raise ValueError("params sequence must have one entry per observation")

    steps: List[FilterStepResult] = []
    state = GaussianState(
        np.asarray(initial_mean, dtype=float), np.asarray(initial_cov, dtype=float)
    )
    total = 0.0
    for t in range(T):
        u = None if controls is None else controls[t]
        result = filter_step(state, Y[t], u, per_step[t], t, predict_first=t > 0)
        steps.append(result)
        total += result.log_likelihood
        state = result.updated
    return FilterOutput(steps, total)


@dataclass(frozen=True)
class SmoothedTrajectory:
    """
    Smoothed marginals ``N(means[t], covariances[t])`` and lag-one
    cross-covariances ``lag_one_cov[t] = Cov(x_t, x_{t-1} | y)`` (zero at t=0).
    """

    means: np.ndarray
    covariances: np.ndarray
    lag_one_cov: np.ndarray

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def states(self) -> List[GaussianState]:
        return [
            GaussianState(self.means[t], self.covariances[t])
            for t in range(len(self))
        ]


def rts_smooth(
    filtered: Sequence[Tuple[GaussianState, GaussianState]],
    A_per_step: Union[np.ndarray, Sequence[np.ndarray]],
) -> SmoothedTrajectory:
    """
    Backward pass over ``(predicted, updated)`` pairs.

    Args:
        filtered: forward-pass pairs, one per step
        A_per_step: transition used to predict step t from step t-1 (entry 0 is
            unused), or a single matrix for all steps

    Returns:
        SmoothedTrajectory; the last step equals the last filtered state
    """
    T = len(filtered)
    if T < 1:
        raise ValueError("nothing to smooth")
    n = filtered[0][1].mean.shape[0]
    if isinstance(A_per_step, np.ndarray) and A_per_step.ndim == 2:
        A_seq: Sequence[np.ndarray] = [A_per_step] * T
    else:
        A_seq = A_per_step

    means = np.empty((T, n))
    covariances = np.empty((T, n, n))
    lag_one = np.zeros((T, n, n))
    means[-1] = filtered[-1][1].mean
    covariances[-1] = filtered[-1][1].covariance

    for t in range(T - 2, -1, -1):
        A = A_seq[t + 1]
        filt = filtered[t][1]
        pred = filtered[t + 1][0]
        factor, _ = robust_cholesky(pred.covariance, "predicted covariance", t + 1)
        gain = cho_solve(factor, A @ filt.covariance).T
        means[t] = filt.mean + gain @ (means[t + 1] - pred.mean)
        covariances[t] = floor_psd(
            filt.covariance + gain @ (covariances[t + 1] - pred.covariance) @ gain.T
        )
        lag_one[t + 1] = covariances[t + 1] @ gain.T
    return SmoothedTrajectory(means, covariances, lag_one)
