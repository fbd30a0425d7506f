#!/usr/bin/env python3
# flake8: noqa
"""
Synthetic experiment suite for kill-chain regime inference.

Runs the scripted Normal -> Reconnaissance -> Intrusion -> Exfiltration
scenario, shows the regime posterior timeline and the adapted transition
matrix, compares detection variants under parameter drift, sweeps the KL
threshold over benign shifts and regime transitions, times one inference
iteration at several sequence lengths, and bundles the figures into a PDF.
"""

import argparse
import dataclasses
import logging
import os
import sys

import matplotlib

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from regime_ssm.analysis.alerting import kl_threshold_sweep
from regime_ssm.analysis.evaluation import evaluate
from regime_ssm.analysis.harness import (
    benign_transition_script,
    drifted_model,
    gate_scores,
    generate_scenario,
    killchain_script,
    run_ablation,
    run_detection,
    summarize_ablation,
)
from regime_ssm.analysis.vsipc import measure_iteration_scaling
from regime_ssm.core.model import default_killchain_model
from regime_ssm.utils.config import DetectionVariant, RunConfig, load_config
from regime_ssm.utils.io import save_params, write_json
from regime_ssm.utils.utils import clear_plot_tracker, generate_pdf_report, set_run_info
from regime_ssm.visualization.visualization import RegimeVisualizer

matplotlib.rcParams["figure.max_open_warning"] = 50

log = logging.getLogger("regime_ssm.experiments")

INTRUSION = 2


def _with_calibration(config: RunConfig, windows: int) -> RunConfig:
    detection = dataclasses.replace(config.detection, calibration_windows=windows)
    return dataclasses.replace(config, detection=detection)


def killchain_timeline(model, config, seed, visualizer, output_dir):
    """Scripted kill-chain scenario, posterior timeline and adapted Pi."""
    scenario = generate_scenario(killchain_script(seed), model)
    detection = run_detection(scenario.observations, model, config)
    report = evaluate(detection, scenario.regimes, onset_regime=INTRUSION)

    visualizer.plot_regime_posteriors(
        detection, scenario.regimes, title="Kill-chain regime posteriors"
    )
    visualizer.plot_transition_heatmap(model.pi, model.labels, title="Initial transition matrix")
    visualizer.plot_transition_heatmap(
        detection.model.pi, detection.model.labels, title="Adapted transition matrix"
    )
    save_params(
        detection.model,
        os.path.join(output_dir, "killchain_params.json"),
        tau_kl=detection.tau_kl,
        window_id=len(detection.beliefs) - 1,
    )
    write_json(report.to_dict(), os.path.join(output_dir, "killchain_report.json"))
    log.info(
        "kill-chain scenario: F1=%.3f SAA=%.3f FPR=%.4f EDM=%s s",
        report.f1,
        report.stage_attribution_accuracy,
        report.false_positive_rate,
        report.early_detection_margin,
    )
    return report


def ablation(model, config, seeds, drift, workers, output_dir):
    """Detection variants on drifted data."""
    table = run_ablation(
        killchain_script(),
        model,
        config,
        variants=list(DetectionVariant),
        seeds=list(range(seeds)),
        generator_model=drifted_model(model, drift),
        onset_regime=INTRUSION,
        max_workers=workers,
    )
    table.to_csv(os.path.join(output_dir, "ablation.csv"), index=False)
    summary = summarize_ablation(table)
    summary.to_csv(os.path.join(output_dir, "ablation_summary.csv"))
    log.info("ablation summary:\n%s", summary.to_string())
    return summary


def threshold_sweep(model, config, seeds, visualizer):
    """KL threshold separating benign shifts from regime transitions."""
    benign, transition = [], []
    for seed in range(seeds):
        script = benign_transition_script(seed)
        scenario = generate_scenario(script, model)
        detection = run_detection(scenario.observations, model, config)
        scores = gate_scores(detection, script)
        benign.extend(scores.benign)
        transition.extend(scores.transition)
    sweep = kl_threshold_sweep(benign, transition)
    visualizer.plot_kl_threshold_sweep(sweep)
    if sweep.separates:
        log.info(
            "separating thresholds: %.3f .. %.3f nats",
            sweep.separating_thresholds.min(),
            sweep.separating_thresholds.max(),
        )
    else:
        log.warning("no KL threshold separates benign shifts from transitions")
    return sweep


def main(argv=None):
    """Run the experiment suite.

    Args:
        argv: command line arguments (default: ``sys.argv[1:]``)
    """
    parser = argparse.ArgumentParser(
        description="Run the synthetic kill-chain experiment suite.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py                         # Full suite with the default preset
  python main.py --seeds 10 --workers 4  # More seeds for the ablation
  python main.py --skip-ablation --skip-pdf
        """,
    )
    parser.add_argument("--config", type=str, help="Run config JSON")
    parser.add_argument("--seed", type=int, default=0, help="Seed of the timeline scenario")
    parser.add_argument("--seeds", type=int, default=3, help="Seeds for ablation and sweep")
    parser.add_argument("--drift", type=float, default=2.0, help="Observation-noise drift of the generator")
    parser.add_argument("--calibration", type=int, default=300, help="Calibration windows")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes")
    parser.add_argument("--output-dir", type=str, default="output", help="Where results go")
    parser.add_argument("--skip-ablation", action="store_true", help="Skip the variant comparison")
    parser.add_argument("--skip-pdf", action="store_true", help="Skip generating the PDF report")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    os.makedirs(args.output_dir, exist_ok=True)

    config = _with_calibration(load_config(args.config), args.calibration)
    model = default_killchain_model()

    clear_plot_tracker()
    set_run_info(
        "killchain_synthetic",
        images_dir=os.path.join(args.output_dir, "images"),
        seed=args.seed,
        batch_size=config.detection.batch_size,
        calibration_windows=args.calibration,
        eta=config.online_em.eta,
    )
    visualizer = RegimeVisualizer()

    killchain_timeline(model, config, args.seed, visualizer, args.output_dir)
    if not args.skip_ablation:
        ablation(model, config, args.seeds, args.drift, args.workers, args.output_dir)
    threshold_sweep(model, config, args.seeds, visualizer)

    scaling = measure_iteration_scaling(model)
    write_json(scaling, os.path.join(args.output_dir, "iteration_scaling.json"))

    if not args.skip_pdf:
        generate_pdf_report(
            output_filename=os.path.join(args.output_dir, "killchain_report.pdf")
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
