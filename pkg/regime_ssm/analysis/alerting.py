"""
KL gating of regime-posterior updates and structured kill-chain alerts.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..core.hmm import predict_regime
from ..core.model import STAGE_LABELS
from ..utils.config import GateConfig

log = logging.getLogger(__name__)

PREDICTION_FLOOR = 1e-12


def kl_gate(gamma_t: np.ndarray, gamma_prev: np.ndarray, pi) -> float:
    """
    Divergence of the realised regime posterior from its one-step prediction.

    ``KL(gamma_t || P^T gamma_prev)`` in nats, with ``0 log 0 = 0`` and the
    prediction floored at 1e-12.

    Returns:
        float: non-negative up to rounding
    """
    gamma_t = np.asarray(gamma_t, dtype=float)
    predicted = np.asarray(pi, dtype=float).T @ np.asarray(gamma_prev, dtype=float)
    predicted = np.maximum(predicted, PREDICTION_FLOOR)
    mask = gamma_t > 0
    return float(np.sum(gamma_t[mask] * np.log(gamma_t[mask] / predicted[mask])))


@dataclass(frozen=True)
class AlertRecord:
    timestamp: float
    stage_posterior: Tuple[float, ...]
    kl_score: float
    elbo_entropy: float
    current_stage: str
    predicted_stage: str
    predicted_posterior: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "timestamp": self.timestamp,
            "stage_posterior": list(self.stage_posterior),
            "kl_score": self.kl_score,
            "elbo_entropy": self.elbo_entropy,
            "current_stage": self.current_stage,
            "predicted_stage": self.predicted_stage,
            "predicted_posterior": list(self.predicted_posterior),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AlertRecord":
        return cls(
            timestamp=float(data["timestamp"]),
            stage_posterior=tuple(float(v) for v in data["stage_posterior"]),
            kl_score=float(data["kl_score"]),
            elbo_entropy=float(data["elbo_entropy"]),
            current_stage=str(data["current_stage"]),
            predicted_stage=str(data["predicted_stage"]),
            predicted_posterior=tuple(float(v) for v in data["predicted_posterior"]),
        )


def build_alert(
    t: float,
    gamma_t: np.ndarray,
    kl: float,
    entropy: float,
    pi,
    config: Optional[GateConfig] = None,
    labels: Sequence[str] = STAGE_LABELS,
    threshold: Optional[float] = None,
) -> Optional[AlertRecord]:
    """
    Emit an alert iff ``kl`` exceeds the gate threshold.

    Args:
        t: window timestamp
        gamma_t: current regime posterior
        kl: score from :func:`kl_gate`
        entropy: regime-chain entropy of the current window
        pi: transition matrix used for the one-step forecast
        config: gate settings; ``config.tau_kl`` is the threshold
        labels: stage names by regime index
        threshold: overrides ``config.tau_kl`` (e.g. a calibrated value)

    Returns:
        AlertRecord or None

    Raises:
        ValueError: if no threshold is available
    """
    tau = threshold if threshold is not None else (config.tau_kl if config else None)
    if tau is None:
        raise ValueError("no KL threshold: set tau_kl or calibrate one")
    if not kl > tau:
        return None
    gamma_t = np.asarray(gamma_t, dtype=float)
    predicted = predict_regime(gamma_t, pi, 1)
    # np.argmax keeps the lowest index on ties
    return AlertRecord(
        timestamp=float(t),
        stage_posterior=tuple(float(v) for v in gamma_t),
        kl_score=float(kl),
        elbo_entropy=float(entropy),
        current_stage=labels[int(np.argmax(gamma_t))],
        predicted_stage=labels[int(np.argmax(predicted))],
        predicted_posterior=tuple(float(v) for v in predicted),
    )


def calibrate_tau_kl(scores: Sequence[float], config: Optional[GateConfig] = None) -> float:
    """
    Threshold from benign-period KL scores.

    The configured percentile of ``scores``, never below ``tau_floor``. An
    explicit ``config.tau_kl`` wins.
    """
    config = config or GateConfig()
    if config.tau_kl is not None:
        return config.tau_kl
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        log.warning("no calibration scores; using tau floor %.3g", config.tau_floor)
        return config.tau_floor
    tau = max(float(np.percentile(scores, config.calibration_percentile)), config.tau_floor)
    log.info(
        "calibrated tau_kl=%.4f from %d scores (p%.1f)",
        tau,
        scores.size,
        config.calibration_percentile,
    )
    return tau


@dataclass(frozen=True)
class ThresholdSweep:
    """Trigger rates of benign and transition events across thresholds."""

    thresholds: np.ndarray
    benign_rate: np.ndarray
    transition_rate: np.ndarray
    max_benign_rate: float = 0.05
    min_transition_rate: float = 0.95

    @property
    def separating_mask(self) -> np.ndarray:
        return (self.benign_rate < self.max_benign_rate) & (
            self.transition_rate > self.min_transition_rate
        )

    @property
    def separates(self) -> bool:
        return bool(np.any(self.separating_mask))

    @property
    def separating_thresholds(self) -> np.ndarray:
        return self.thresholds[self.separating_mask]


def kl_threshold_sweep(
    benign_scores: Sequence[float],
    transition_scores: Sequence[float],
    thresholds: Optional[Sequence[float]] = None,
    max_benign_rate: float = 0.05,
    min_transition_rate: float = 0.95,
) -> ThresholdSweep:
    """
    Fraction of benign and transition events whose score exceeds each threshold.

    Without explicit thresholds the sweep uses every distinct observed score
    plus zero, so any separating threshold that exists is found.
    """
    benign = np.asarray(benign_scores, dtype=float)
    transition = np.asarray(transition_scores, dtype=float)
    if benign.size == 0 or transition.size == 0:
        raise ValueError("need benign and transition scores")
    if thresholds is None:
        grid = np.unique(np.concatenate([[0.0], benign, transition]))
    else:
        grid = np.asarray(sorted(thresholds), dtype=float)
    benign_rate = (benign[None, :] > grid[:, None]).mean(axis=1)
    transition_rate = (transition[None, :] > grid[:, None]).mean(axis=1)
    sweep = ThresholdSweep(
        grid, benign_rate, transition_rate, max_benign_rate, min_transition_rate
    )
    log.info(
        "threshold sweep over %d values: separating threshold %s",
        len(grid),
        "found" if sweep.separates else "not found",
    )
    return sweep
