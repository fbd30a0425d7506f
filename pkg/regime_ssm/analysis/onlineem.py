"""
Online parameter updates with exponential forgetting.

The transition matrix and per-regime noise covariances are pulled toward the
sufficient statistics of the latest inference window at rate ``eta``. Nothing
else in the model is adapted.
"""

import logging
from collections import deque
from typing import Deque, List, Optional

import numpy as np

from ..core.model import (
    PSD_FLOOR,
    SwitchingModel,
    TransitionMatrix,
    floor_psd,
)
from ..utils.config import EmCadence, OnlineEmConfig, ProcessNoiseUpdate
from .vsipc import VariationalResult, effective_params

log = logging.getLogger(__name__)


def update_transition(
    pi,
    xi_t: np.ndarray,
    gamma_prev: np.ndarray,
    config: OnlineEmConfig,
) -> TransitionMatrix:
    """
    Blend the transition matrix with the window's pairwise marginals.

    ``P <- (1 - eta) P + eta * xi_t / (gamma_prev + floor)`` row-wise, then each
    row is renormalised.

    Args:
        pi: current K x K transition matrix (array or TransitionMatrix)
        xi_t: K x K pairwise marginal, rows index the source regime
        gamma_prev: marginal of the source step
        config: online EM settings

    Returns:
        TransitionMatrix: row-stochastic update
    """
    P = np.asarray(pi, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float)
    gamma_prev = np.asarray(gamma_prev, dtype=float)
    if xi_t.shape != P.shape or gamma_prev.shape != (P.shape[0],):
        raise ValueError("xi_t and gamma_prev must match the transition matrix")
    eta = config.eta
    blended = (1.0 - eta) * P + eta * xi_t / (gamma_prev[:, None] + config.division_floor)
    return TransitionMatrix(blended / blended.sum(axis=1, keepdims=True))


def update_obs_noise(
    R_s: np.ndarray,
    gamma_t_s: float,
    innovation: np.ndarray,
    C_s: np.ndarray,
    P_filt: np.ndarray,
    config: OnlineEmConfig,
) -> np.ndarray:
    """``R <- (1 - eta) R + eta * gamma (e e^T + C P C^T) / (gamma + floor)``, floored."""
    e = np.asarray(innovation, dtype=float)
    energy = np.outer(e, e) + C_s @ P_filt @ C_s.T
    eta = config.eta
    updated = (1.0 - eta) * R_s + eta * gamma_t_s * energy / (
        gamma_t_s + config.division_floor
    )
    return floor_psd(updated, PSD_FLOOR)


def update_proc_noise(
    Q_s: np.ndarray,
    gamma_t_s: float,
    P_smooth_t: np.ndarray,
    P_smooth_prev: np.ndarray,
    A_eff: np.ndarray,
    config: OnlineEmConfig,
) -> np.ndarray:
    """
    ``Q <- (1 - eta) Q + eta * gamma (P_t - A P_prev A^T) / (gamma + floor)``.

    The bracket can be indefinite, so the result is always floored.
    """
    residual = P_smooth_t - A_eff @ P_smooth_prev @ A_eff.T
    eta = config.eta
    updated = (1.0 - eta) * Q_s + eta * gamma_t_s * residual / (
        gamma_t_s + config.division_floor
    )
    return floor_psd(updated, PSD_FLOOR)


def update_proc_noise_classical(
    Q_s: np.ndarray,
    gamma_t_s: float,
    mean_t: np.ndarray,
    mean_prev: np.ndarray,
    P_smooth_t: np.ndarray,
    P_smooth_prev: np.ndarray,
    lag_one: np.ndarray,
    A_eff: np.ndarray,
    config: OnlineEmConfig,
    control: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Process noise update from the full expected residual second moment.

    ``E[(x_t - A x_{t-1} - u)(x_t - A x_{t-1} - u)^T]`` with ``lag_one =
    Cov(x_t, x_{t-1})``; never indefinite up to rounding.
    """
    drift = mean_t - A_eff @ mean_prev
    if control is not None:
        drift = drift - control
    second_moment = (
        np.outer(drift, drift)
        + P_smooth_t
        - lag_one @ A_eff.T
        - A_eff @ lag_one.T
        + A_eff @ P_smooth_prev @ A_eff.T
    )
    eta = config.eta
    updated = (1.0 - eta) * Q_s + eta * gamma_t_s * second_moment / (
        gamma_t_s + config.division_floor
    )
    return floor_psd(updated, PSD_FLOOR)


class OnlineEmUpdater:
    """
    Owns the adapted parameters of one stream.

    Readers take :attr:`model`, which is replaced as a whole after each window,
    so a snapshot never mixes parameters from two windows. The transition
    matrix iterate is also tail-averaged over the last ``average_window``
    updates.
    """

    def __init__(self, model: SwitchingModel, config: Optional[OnlineEmConfig] = None):
        self.config = config or OnlineEmConfig()
        self._model = model
        self._pi = np.array(model.pi, dtype=float)
        self._R: List[np.ndarray] = [
            np.array(r.observation_noise_R) for r in model.regimes
        ]
        self._Q: List[np.ndarray] = [np.array(r.process_noise_Q) for r in model.regimes]
        self._history: Deque[np.ndarray] = deque(maxlen=self.config.average_window)
        self.updates = 0

    @property
    def model(self) -> SwitchingModel:
        return self._model

    def averaged_transition(self) -> np.ndarray:
        """Mean of the recent transition iterates (the current one if none yet)."""
        if not self._history:
            return self._pi.copy()
        return np.mean(np.stack(self._history), axis=0)

    def observe_transition(self, xi_t: np.ndarray, gamma_prev: np.ndarray) -> np.ndarray:
        """Apply one transition update and return the new iterate."""
        self._pi = np.array(update_transition(self._pi, xi_t, gamma_prev, self.config))
        self._history.append(self._pi)
        return self._pi

    def _update_step(
        self,
        t: int,
        result: VariationalResult,
        controls: Optional[np.ndarray],
    ):
        model = self._model
        gamma = result.posteriors.gamma
        bank = result.bank
        if t > 0:
            self.observe_transition(result.posteriors.xi[t - 1], gamma[t - 1])

        for s, regime in enumerate(model.regimes):
            self._R[s] = update_obs_noise(
                self._R[s],
                gamma[t, s],
                bank.innovations[t, s],
                regime.observation_C,
                bank.filtered_covs[t, s],
                self.config,
            )
        if t == 0:
            return

        smoothed = result.smoothed
        P_t = smoothed.covariances[t]
        P_prev = smoothed.covariances[t - 1]
        A_eff, _ = effective_params(gamma[t], model.regimes, P_prev)
        for s in range(model.K):
            if self.config.process_noise_update is ProcessNoiseUpdate.CLASSICAL:
                self._Q[s] = update_proc_noise_classical(
                    self._Q[s],
                    gamma[t, s],
                    smoothed.means[t],
                    smoothed.means[t - 1],
                    P_t,
                    P_prev,
                    smoothed.lag_one_cov[t],
                    A_eff,
                    self.config,
                    None if controls is None else controls[t],
                )
            else:
                self._Q[s] = update_proc_noise(
                    self._Q[s], gamma[t, s], P_t, P_prev, A_eff, self.config
                )

    def apply(
        self,
        result: VariationalResult,
        controls: Optional[np.ndarray] = None,
    ) -> SwitchingModel:
        """
        Fold one inference window into the parameters and publish a new model.

        With ``WINDOW_FINAL`` cadence only the window's last step is used;
        ``EVERY_STEP`` walks all of them in order.

        Returns:
            SwitchingModel: the new snapshot (also available as :attr:`model`)
        """
        T = result.posteriors.T
        steps = range(T) if self.config.cadence is EmCadence.EVERY_STEP else [T - 1]
        for t in steps:
            self._update_step(t, result, controls)
            self.updates += 1
        self._model = self._model.with_noise(
            process_noise=self._Q,
            observation_noise=self._R,
            transition=self._pi,
        )
        log.debug("online EM applied %d step(s), %d in total", len(steps), self.updates)
        return self._model


def settle_transition(
    model: SwitchingModel,
    track: np.ndarray,
    config: Optional[OnlineEmConfig] = None,
) -> SwitchingModel:
    """
    Run the online transition update over a known regime path.

    Every step contributes a one-hot pairwise marginal, so the result is the
    transition matrix online EM converges to on streams like ``track``. The
    noise covariances are left as they are.

    Args:
        model: starting parameters
        track: regime label per step
        config: online EM settings (``eta`` sets how far back the result looks)

    Returns:
        SwitchingModel: ``model`` with the settled transition matrix
    """
    track = np.asarray(track, dtype=int)
    if track.ndim != 1 or track.size < 2:
        raise ValueError("need a regime path of at least two steps")
    if track.min() < 0 or track.max() >= model.K:
        raise ValueError("regime labels out of range")
    updater = OnlineEmUpdater(model, config)
    eye = np.eye(model.K)
    for prev, cur in zip(track[:-1], track[1:]):
        settled = updater.observe_transition(np.outer(eye[prev], eye[cur]), eye[prev])
    log.debug("transition settled over %d steps", track.size - 1)
    return model.with_noise(transition=settled)
