import os

import numpy as np
import pytest

from regime_ssm.analysis.alerting import kl_threshold_sweep
from regime_ssm.analysis.harness import BeliefState, DetectionResult
from regime_ssm.utils import utils
from regime_ssm.utils.config import DetectionVariant
from regime_ssm.visualization.visualization import (
    RegimeVisualizer,
    plot_kl_threshold_sweep,
    plot_regime_posteriors,
    plot_transition_heatmap,
)


@pytest.fixture
def tracked(tmp_path):
    utils.clear_plot_tracker()
    utils.set_run_info("viz", images_dir=str(tmp_path))
    yield tmp_path
    utils.clear_plot_tracker()


def switching_detection(T=30):
    result = DetectionResult(DetectionVariant.FULL, ("Normal", "Reconnaissance"))
    for t in range(T):
        p = min(1.0, t / T)
        gamma = np.array([1.0 - p, p])
        result.beliefs.append(BeliefState(t, float(t), gamma, gamma, 0.0, 0.1, t == 20, 0.0))
    return result


def baseline_detection(T=30):
    result = DetectionResult(DetectionVariant.SINGLE_REGIME, ("Normal",), tau_kl=18.5)
    one = np.ones(1)
    for t in range(T):
        result.beliefs.append(BeliefState(t, float(t), one, one, 0.0, 0.0, t == 10, 25.0 if t == 10 else 2.0))
    return result


class TestRegimeVisualizer:
    """Figures saved through the plot tracker."""

    def test_posterior_timeline(self, tracked):
        path = RegimeVisualizer().plot_regime_posteriors(
            switching_detection(), truth=np.repeat([0, 1], 15)
        )
        assert os.path.exists(path)

    def test_baseline_score_plot(self, tracked):
        path = plot_regime_posteriors(baseline_detection(), title="Baseline")
        assert os.path.exists(path)

    def test_empty_detection(self, tracked):
        empty = DetectionResult(DetectionVariant.FULL, ("Normal",))
        assert RegimeVisualizer().plot_regime_posteriors(empty) is None

    def test_transition_heatmap(self, tracked, two_regime_model):
        path = plot_transition_heatmap(two_regime_model.pi, ("Normal", "Attack"), title="Pi")
        assert os.path.basename(path) == "plot_01_Pi.png"

    def test_heatmap_with_too_few_labels(self, tracked):
        assert plot_transition_heatmap(np.eye(3), ("Normal",)) is not None

    def test_threshold_sweep(self, tracked):
        sweep = kl_threshold_sweep([0.1, 0.2, 0.3], [1.5, 2.0])
        path = plot_kl_threshold_sweep(sweep)
        assert os.path.exists(path)
        assert utils.get_plot_tracker_info()["plot_count"] == 1

    def test_styles(self, caplog):
        visualizer = RegimeVisualizer(style="unknown")
        assert visualizer.current_colors == visualizer.color_schemes["default"]
        visualizer.set_style("dark")
        assert visualizer.style == "dark"
        visualizer.set_style("neon")
        assert visualizer.style == "dark"
        assert "Unknown style" in caplog.text

    def test_many_regimes_get_colors(self):
        assert len(RegimeVisualizer()._regime_colors(6)) == 6
