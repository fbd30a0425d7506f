import numpy as np
import pytest

from regime_ssm.analysis.alerting import AlertRecord
from regime_ssm.analysis.evaluation import early_detection_margin, evaluate, f1_score
from regime_ssm.analysis.harness import ANOMALY_LABEL, BeliefState, DetectionResult
from regime_ssm.core.model import STAGE_LABELS
from regime_ssm.utils.config import DetectionVariant

KILLCHAIN_TRUTH = np.repeat([0, 1, 2, 3], [720, 480, 300, 300])


def make_detection(gamma, alert_windows=(), stages=None, variant=DetectionVariant.FULL):
    """Detection result with one belief per row of ``gamma`` and alerts at ``alert_windows``."""
    gamma = np.asarray(gamma, dtype=float)
    labels = STAGE_LABELS[: gamma.shape[1]]
    alert_windows = set(alert_windows)
    result = DetectionResult(variant, labels)
    for t, row in enumerate(gamma):
        result.beliefs.append(
            BeliefState(t, float(t), row, row, 0.0, 0.0, t in alert_windows, 0.0)
        )
    for t in sorted(alert_windows):
        current = (stages or {}).get(t, labels[int(np.argmax(gamma[t]))])
        result.alerts.append(
            AlertRecord(
                timestamp=float(t),
                stage_posterior=tuple(gamma[t]),
                kl_score=1.0,
                elbo_entropy=0.0,
                current_stage=current,
                predicted_stage=current,
                predicted_posterior=tuple(gamma[t]),
            )
        )
    result.batch_latencies.append((len(gamma), 0.01 * len(gamma)))
    return result


def one_hot(truth, K=4):
    return np.eye(K)[np.asarray(truth)]


class TestEvaluate:
    """Aggregate metrics against the true regime track."""

    def test_perfect_posterior(self):
        report = evaluate(make_detection(one_hot(KILLCHAIN_TRUTH)), KILLCHAIN_TRUTH)
        assert report.stage_attribution_accuracy == 1.0
        assert report.f1 == 1.0
        assert report.false_positive_rate == 0.0
        assert report.f1_per_class == {
            "Reconnaissance": 1.0,
            "LateralMovement": 1.0,
            "Exfiltration": 1.0,
        }

    def test_no_alerts(self):
        report = evaluate(make_detection(one_hot(KILLCHAIN_TRUTH)), KILLCHAIN_TRUTH)
        assert report.num_alerts == 0
        assert report.false_positive_rate == 0.0
        assert report.early_detection_margin is None

    def test_false_positive_rate(self):
        truth = np.array([0, 0, 0, 0, 1, 1])
        detection = make_detection(one_hot(truth), alert_windows=(1, 4))
        report = evaluate(detection, truth)
        assert report.false_positive_rate == pytest.approx(0.25)

    def test_all_normal_prediction_scores_zero_f1(self):
        truth = np.array([0, 0, 1, 1])
        report = evaluate(make_detection(one_hot([0, 0, 0, 0])), truth)
        assert report.f1 == 0.0
        assert report.stage_attribution_accuracy == 0.5

    def test_latency(self):
        report = evaluate(make_detection(one_hot([0, 0, 1, 1])), [0, 0, 1, 1])
        assert report.latency_mean_ms == pytest.approx(10.0)
        assert report.latency_std_ms == pytest.approx(0.0)
        assert report.elbo_final is None

    def test_baseline_has_no_attribution(self):
        truth = np.array([0, 0, 0, 1, 1])
        detection = DetectionResult(DetectionVariant.SINGLE_REGIME, ("Normal",))
        one = np.ones(1)
        for t in range(5):
            detection.beliefs.append(BeliefState(t, float(t), one, one, 0.0, 0.0, t >= 3, 30.0))
        report = evaluate(detection, truth)
        assert report.stage_attribution_accuracy is None
        assert report.f1 == 1.0
        assert report.f1_per_class == {}

    def test_summary_flattens_per_class(self):
        summary = evaluate(make_detection(one_hot(KILLCHAIN_TRUTH)), KILLCHAIN_TRUTH).summary()
        assert "f1_per_class" not in summary
        assert summary["f1_Exfiltration"] == 1.0

    def test_rejects_empty_truth(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate(make_detection(one_hot([0, 1])), [])

    def test_rejects_misaligned_truth(self):
        with pytest.raises(ValueError, match="windows"):
            evaluate(make_detection(one_hot([0, 1])), [0, 1, 1])


class TestEarlyDetectionMargin:
    """Lead time of the first attack-implicating alert."""

    def test_alert_before_onset(self):
        gamma = one_hot(KILLCHAIN_TRUTH)
        detection = make_detection(gamma, alert_windows=(720,))
        margin = early_detection_margin(detection, KILLCHAIN_TRUTH, onset_regime=2)
        assert margin == 480.0

    def test_defaults_to_first_attack_window(self):
        detection = make_detection(one_hot(KILLCHAIN_TRUTH), alert_windows=(700,), stages={700: "Reconnaissance"})
        assert early_detection_margin(detection, KILLCHAIN_TRUTH) == 20.0

    def test_alert_at_onset(self):
        detection = make_detection(one_hot(KILLCHAIN_TRUTH), alert_windows=(1200,))
        assert early_detection_margin(detection, KILLCHAIN_TRUTH, onset_regime=2) == 0.0

    def test_alert_after_onset(self):
        detection = make_detection(one_hot(KILLCHAIN_TRUTH), alert_windows=(1250,))
        assert early_detection_margin(detection, KILLCHAIN_TRUTH, onset_regime=2) is None

    def test_normal_alerts_are_ignored(self):
        detection = make_detection(one_hot(KILLCHAIN_TRUTH), alert_windows=(100, 800))
        assert early_detection_margin(detection, KILLCHAIN_TRUTH, onset_regime=2) == 400.0

    def test_no_onset(self):
        truth = np.zeros(10, dtype=int)
        detection = make_detection(one_hot(truth), alert_windows=(3,), stages={3: "Exfiltration"})
        assert early_detection_margin(detection, truth) is None

    def test_baseline_anomaly_alerts_count(self):
        truth = np.array([0, 0, 0, 1, 1])
        detection = DetectionResult(DetectionVariant.SINGLE_REGIME, ("Normal",))
        one = np.ones(1)
        for t in range(5):
            detection.beliefs.append(BeliefState(t, float(t), one, one, 0.0, 0.0, t == 1, 0.0))
        detection.alerts.append(
            AlertRecord(1.0, (1.0,), 30.0, 0.0, ANOMALY_LABEL, ANOMALY_LABEL, (1.0,))
        )
        assert early_detection_margin(detection, truth) == 2.0


class TestF1Score:
    """Binary F1 edge cases."""

    def test_perfect(self):
        assert f1_score([True, False, True], [True, False, True]) == 1.0

    def test_nothing_to_find(self):
        assert f1_score([False, False], [False, False]) == 1.0

    def test_all_wrong(self):
        assert f1_score([True, False], [False, True]) == 0.0

    def test_partial(self):
        # tp=1 fp=1 fn=1
        assert f1_score([True, True, False], [True, False, True]) == pytest.approx(0.5)
