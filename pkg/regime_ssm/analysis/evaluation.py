"""
Detection metrics against a ground-truth regime track.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .harness import DetectionResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationReport:
    """
    Attributes:
        f1: aggregate attack-vs-normal F1
        f1_per_class: one-vs-rest F1 per attack regime label (empty without
            stage attribution)
        false_positive_rate: alert windows during Normal / Normal windows
        stage_attribution_accuracy: argmax accuracy, None without attribution
        early_detection_margin: seconds between the first attack-implicating
            alert and the onset, None if no such alert precedes or meets it
        latency_mean_ms, latency_std_ms: per-observation processing time
        elbo_final: bound of the last batch, None for the baseline
    """

    f1: float
    false_positive_rate: float
    stage_attribution_accuracy: Optional[float]
    early_detection_margin: Optional[float]
    latency_mean_ms: float
    latency_std_ms: float
    elbo_final: Optional[float]
    num_alerts: int
    f1_per_class: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def summary(self) -> Dict[str, object]:
        """Flat scalar metrics for tables."""
        out = {k: v for k, v in self.to_dict().items() if k != "f1_per_class"}
        for label, value in self.f1_per_class.items():
            out[f"f1_{label}"] = value
        return out

    def without_latency(self) -> Dict[str, object]:
        out = self.to_dict()
        out.pop("latency_mean_ms")
        out.pop("latency_std_ms")
        return out


def f1_score(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Binary F1; 1.0 when there are neither positives nor predictions."""
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def early_detection_margin(
    detection: DetectionResult,
    truth: np.ndarray,
    onset_regime: Optional[int] = None,
    normal_label: Optional[str] = None,
) -> Optional[float]:
    """
    Onset time minus the first alert whose current or predicted stage is not Normal.

    The onset is the first window whose true regime is non-Normal, or equal to
    ``onset_regime`` when given. Returns None if there is no onset or the
    first such alert comes after it.
    """
    truth = np.asarray(truth, dtype=int)
    onset_mask = truth != 0 if onset_regime is None else truth == onset_regime
    if not np.any(onset_mask):
        return None
    onset_time = detection.timestamps()[int(np.argmax(onset_mask))]
    normal = normal_label or detection.labels[0]
    for alert in detection.alerts:
        if alert.current_stage != normal or alert.predicted_stage != normal:
            if alert.timestamp <= onset_time:
                return float(onset_time - alert.timestamp)
            return None
    return None


def evaluate(
    detection: DetectionResult,
    truth: Sequence[int],
    onset_regime: Optional[int] = None,
) -> EvaluationReport:
    """
    Score a detection run against the true regime track.

    Binary F1 treats any non-Normal regime as attack; the prediction is the
    argmax regime, or the alert flag for the single-regime baseline. FPR
    counts alert windows during true Normal windows.

    Raises:
        ValueError: on an empty or misaligned ground truth
    """
    truth = np.asarray(truth, dtype=int)
    if truth.size == 0:
        raise ValueError("ground truth is empty")
    if truth.size != len(detection.beliefs):
        raise ValueError(
            f"ground truth has {truth.size} windows, beliefs have {len(detection.beliefs)}"
        )

    alerts = detection.alert_flags()
    normal = truth == 0
    fpr = float(np.sum(alerts & normal) / np.sum(normal)) if np.any(normal) else 0.0

    gamma = detection.gamma_matrix()
    per_class: Dict[str, float] = {}
    if gamma is None:
        saa = None
        f1 = f1_score(alerts, ~normal)
    else:
        predicted = np.argmax(gamma, axis=1)
        saa = float(np.mean(predicted == truth))
        f1 = f1_score(predicted != 0, ~normal)
        for s in range(1, gamma.shape[1]):
            if np.any(truth == s) or np.any(predicted == s):
                per_class[detection.labels[s]] = f1_score(predicted == s, truth == s)

    latency = detection.latency_ms()
    report = EvaluationReport(
        f1=f1,
        false_positive_rate=fpr,
        stage_attribution_accuracy=saa,
        early_detection_margin=early_detection_margin(detection, truth, onset_regime),
        latency_mean_ms=float(latency.mean()) if latency.size else 0.0,
        latency_std_ms=float(latency.std()) if latency.size else 0.0,
        elbo_final=detection.elbo_trace[-1] if detection.elbo_trace else None,
        num_alerts=len(detection.alerts),
        f1_per_class=per_class,
    )
    log.info(
        "F1=%.3f FPR=%.4f SAA=%s EDM=%s",
        report.f1,
        report.false_positive_rate,
        "n/a" if saa is None else f"{saa:.3f}",
        report.early_detection_margin,
    )
    return report
