"""Tests for the experiment suite script.
Heavy experiments are patched so that these run quickly.
"""

import os
import sys
from unittest.mock import MagicMock, patch

# Add the project root to the path before importing project modules
sys.path.insert(
    0, os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)  # noqa: E402

import scripts.main as main_module  # noqa: E402


class TestMainScript:
    """Unit tests for ``scripts.main`` with heavy parts patched."""

    def test_main_runs_quickly_with_patches(self, tmp_path):
        """``main`` wires the experiments together and writes its outputs."""
        with (
            patch.object(main_module, "killchain_timeline") as mock_timeline,
            patch.object(main_module, "ablation") as mock_ablation,
            patch.object(main_module, "threshold_sweep") as mock_sweep,
            patch.object(
                main_module, "measure_iteration_scaling", return_value={"lengths": [10]}
            ) as mock_scaling,
            patch.object(main_module, "generate_pdf_report") as mock_report,
        ):
            code = main_module.main(["--output-dir", str(tmp_path), "--seeds", "2"])

        assert code == 0
        mock_timeline.assert_called_once()
        mock_ablation.assert_called_once()
        assert mock_ablation.call_args.args[2] == 2
        mock_sweep.assert_called_once()
        mock_scaling.assert_called_once()
        mock_report.assert_called_once_with(
            output_filename=os.path.join(str(tmp_path), "killchain_report.pdf")
        )
        assert (tmp_path / "iteration_scaling.json").exists()

    def test_skip_flags(self, tmp_path):
        """``--skip-ablation`` and ``--skip-pdf`` leave those steps out."""
        with (
            patch.object(main_module, "killchain_timeline"),
            patch.object(main_module, "ablation") as mock_ablation,
            patch.object(main_module, "threshold_sweep"),
            patch.object(main_module, "measure_iteration_scaling", return_value={}),
            patch.object(main_module, "generate_pdf_report") as mock_report,
        ):
            main_module.main(
                ["--output-dir", str(tmp_path), "--skip-ablation", "--skip-pdf"]
            )
        mock_ablation.assert_not_called()
        mock_report.assert_not_called()

    def test_calibration_override(self, tmp_path):
        """The calibration length reaches the detection config."""
        timeline = MagicMock()
        with (
            patch.object(main_module, "killchain_timeline", timeline),
            patch.object(main_module, "ablation"),
            patch.object(main_module, "threshold_sweep"),
            patch.object(main_module, "measure_iteration_scaling", return_value={}),
            patch.object(main_module, "generate_pdf_report"),
        ):
            main_module.main(["--output-dir", str(tmp_path), "--calibration", "42"])
        config = timeline.call_args.args[1]
        assert config.detection.calibration_windows == 42
