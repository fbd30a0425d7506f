#!/usr/bin/env python3
"""Command line interface for :mod:`regime_ssm`."""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import os
import sys
from typing import Optional

import click
import numpy as np

from regime_ssm.analysis.evaluation import evaluate
from regime_ssm.analysis.harness import (
    drifted_model,
    generate_scenario,
    killchain_script,
    run_ablation,
    run_detection,
    summarize_ablation,
)
from regime_ssm.analysis.oracle import DEFAULT_MAX_PATHS, enumerate_exact
from regime_ssm.core.feov import NormalizerState, featurize
from regime_ssm.core.model import default_killchain_model, sample_trajectory
from regime_ssm.errors import RegimeSSMError
from regime_ssm.utils.config import DetectionVariant, load_config
from regime_ssm.utils.io import (
    load_model,
    load_params,
    normalizer_to_dict,
    read_detection,
    read_flow_records,
    read_observations,
    save_model,
    save_params,
    write_alerts,
    write_beliefs,
    write_exact_posterior,
    write_json,
    write_observations,
    write_report,
)

log = logging.getLogger(__name__)

VARIANT_CHOICES = [v.value for v in DetectionVariant]


def _exit_on_error(func):
    """Report package errors on stderr and exit with their exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RegimeSSMError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except (ValueError, OSError) as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _model_or_preset(path: Optional[str]):
    if path is None:
        return default_killchain_model()
    return load_model(path)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.option("-q", "--quiet", is_flag=True, help="Warnings and errors only")
def cli(verbose: bool, quiet: bool):
    """Switching state-space intrusion detection tool."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command("simulate")
@click.option("--model", "model_path", type=click.Path(exists=True), help="Model JSON (default: kill-chain preset)")
@click.option("--steps", type=int, default=1000, show_default=True, help="Number of windows")
@click.option("--seed", type=int, default=None, help="Random seed")
@click.option("--killchain", is_flag=True, help="Scripted Normal/Recon/Intrusion/Exfiltration track instead of sampling regimes")
@click.option("--out", required=True, type=click.Path(), help="Trajectory CSV")
@click.option("--save-model", "model_out", type=click.Path(), help="Also write the model JSON")
@_exit_on_error
def simulate_cmd(model_path, steps, seed, killchain, out, model_out):
    """Sample regimes, latents and observations from a model."""
    model = _model_or_preset(model_path)
    if killchain:
        scenario = generate_scenario(killchain_script(seed), model)
        regimes, latents, observations = (
            scenario.regimes,
            scenario.latents,
            scenario.observations,
        )
    else:
        trajectory = sample_trajectory(model, steps, seed)
        regimes, latents, observations = (
            trajectory.regimes,
            trajectory.latents,
            trajectory.observations,
        )
    write_observations(observations, out, regimes=regimes, latents=latents)
    if model_out:
        save_model(model, model_out)
    click.echo(f"Wrote {len(regimes)} windows to {out}")


@cli.command("featurize")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True), help="Flow-record CSV")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Run config JSON (features section)")
@click.option("--window", type=float, default=None, help="Window width in seconds (default: config, 1.0)")
@click.option("--stride", type=float, default=None, help="Window stride (default: tumbling)")
@click.option("--calibrate", type=int, default=None, help="Calibration windows (default: config, 3600)")
@click.option("--out", required=True, type=click.Path(), help="Observation CSV")
@click.option("--normalizer-out", type=click.Path(), help="Write normaliser statistics as JSON")
@_exit_on_error
def featurize_cmd(in_path, config_path, window, stride, calibrate, out, normalizer_out):
    """Turn flow records into normalised 17-dimensional observations."""
    features = load_config(config_path).features
    records = read_flow_records(in_path)
    frame, state = featurize(
        records,
        window if window is not None else features.window_seconds,
        calibrate if calibrate is not None else features.calibration_windows,
        stride if stride is not None else features.stride,
        state=NormalizerState.empty(variance_floor=features.variance_floor),
    )
    frame.to_csv(out, index=False)
    if normalizer_out:
        write_json(normalizer_to_dict(state), normalizer_out)
    click.echo(f"Wrote {len(frame)} windows to {out}")


@cli.command("detect")
@click.option("--model", "model_path", type=click.Path(exists=True), help="Model or parameter snapshot JSON")
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True), help="Observation CSV")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Run config JSON")
@click.option("--variant", type=click.Choice(VARIANT_CHOICES), default=None, help="Override the detection variant")
@click.option("--out-dir", required=True, type=click.Path(), help="Directory for beliefs, alerts and parameters")
@click.option("--save-params", "params_every", type=int, default=None, help="Write a parameter snapshot every N batches")
@_exit_on_error
def detect_cmd(model_path, obs_path, config_path, variant, out_dir, params_every):
    """Run the streaming detector over an observation CSV."""
    config = load_config(config_path)
    detection_cfg = config.detection
    if variant is not None:
        detection_cfg = dataclasses.replace(detection_cfg, variant=DetectionVariant(variant))
    if params_every is not None:
        detection_cfg = dataclasses.replace(detection_cfg, snapshot_every=params_every)
    config = dataclasses.replace(config, detection=detection_cfg)

    model = _model_or_preset(model_path)
    table = read_observations(obs_path, detection_cfg.label_map)
    detection = run_detection(table.values, model, config, timestamps=table.timestamps)

    os.makedirs(out_dir, exist_ok=True)
    write_beliefs(detection, os.path.join(out_dir, "beliefs.csv"))
    write_alerts(detection.alerts, os.path.join(out_dir, "alerts.jsonl"))
    save_params(
        detection.model,
        os.path.join(out_dir, "params_final.json"),
        tau_kl=detection.tau_kl,
        window_id=len(detection.beliefs) - 1,
    )
    for snapshot in detection.snapshots:
        save_params(
            snapshot.model,
            os.path.join(out_dir, f"params_{snapshot.window_id:06d}.json"),
            tau_kl=snapshot.tau_kl,
            window_id=snapshot.window_id,
        )
    click.echo(
        f"{len(detection.beliefs)} windows, {len(detection.alerts)} alerts, "
        f"{len(detection.snapshots)} snapshots written to {out_dir}"
    )


@cli.command("evaluate")
@click.option("--beliefs", "beliefs_path", required=True, type=click.Path(exists=True), help="Beliefs CSV from detect")
@click.option("--alerts", "alerts_path", type=click.Path(exists=True), help="Alerts JSON-lines from detect")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True), help="CSV with a regime or label column")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Run config JSON (label map)")
@click.option("--onset-regime", type=int, default=None, help="Regime whose onset anchors the early-detection margin")
@click.option("--out", type=click.Path(), help="Evaluation report JSON")
@_exit_on_error
def evaluate_cmd(beliefs_path, alerts_path, truth_path, config_path, onset_regime, out):
    """Score detector output against ground truth."""
    config = load_config(config_path)
    truth = read_observations(truth_path, config.detection.label_map).truth
    if truth is None:
        raise ValueError(f"{truth_path} has no regime or label column")
    detection = read_detection(beliefs_path, alerts_path)
    report = evaluate(detection, truth, onset_regime=onset_regime)
    if out:
        write_report(report, out)
    click.echo(json.dumps(report.to_dict(), indent=2))


@cli.command("oracle")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True), help="Model JSON")
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True), help="Observation CSV")
@click.option("--out", required=True, type=click.Path(), help="Exact posterior JSON")
@click.option("--max-paths", type=int, default=DEFAULT_MAX_PATHS, show_default=True, help="Path enumeration cap")
@click.option("--states/--no-states", default=False, show_default=True, help="Also write smoothed state means (small path counts only)")
@click.option("--workers", type=int, default=None, help="Worker processes")
@_exit_on_error
def oracle_cmd(model_path, obs_path, out, max_paths, states, workers):
    """Exact regime posterior by enumerating every regime path."""
    model = load_model(model_path)
    table = read_observations(obs_path)
    exact = enumerate_exact(
        model, table.values, max_paths=max_paths, with_states=states, max_workers=workers
    )
    write_exact_posterior(exact, out, model.labels)
    click.echo(
        f"Enumerated {exact.num_components} paths, log evidence {exact.exact_log_evidence:.6f}"
    )


@cli.command("ablate")
@click.option("--model", "model_path", type=click.Path(exists=True), help="Detector model JSON (default: preset)")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Run config JSON")
@click.option("--seeds", type=int, default=3, show_default=True, help="Number of seeds")
@click.option("--variants", multiple=True, type=click.Choice(VARIANT_CHOICES), help="Variants to run (default: all)")
@click.option("--drift", type=float, default=2.0, show_default=True, help="Observation-noise scale of the generating model")
@click.option("--scale", type=float, default=1.0, show_default=True, help="Scale of the scripted segment durations")
@click.option("--workers", type=int, default=None, help="Worker processes")
@click.option("--out", required=True, type=click.Path(), help="Ablation table (.csv or .json)")
@_exit_on_error
def ablate_cmd(model_path, config_path, seeds, variants, drift, scale, workers, out):
    """Compare detection variants on the scripted kill-chain scenario."""
    config = load_config(config_path)
    model = _model_or_preset(model_path)
    script = killchain_script(
        normal=max(1, int(720 * scale)),
        recon=max(1, int(480 * scale)),
        intrusion=max(1, int(300 * scale)),
        exfiltration=max(1, int(300 * scale)),
    )
    chosen = [DetectionVariant(v) for v in variants] or list(DetectionVariant)
    table = run_ablation(
        script,
        model,
        config,
        variants=chosen,
        seeds=list(range(seeds)),
        generator_model=drifted_model(model, drift),
        onset_regime=2,
        max_workers=workers,
    )
    if out.endswith(".json"):
        table.to_json(out, orient="records", indent=2)
    else:
        table.to_csv(out, index=False)
    click.echo(summarize_ablation(table).to_string())


@cli.command("inspect-params")
@click.argument("params_file", type=click.Path(exists=True))
@_exit_on_error
def inspect_params_cmd(params_file):
    """Print the transition matrix and gate threshold of a parameter snapshot."""
    document = load_params(params_file)
    click.echo(f"labels: {', '.join(document.model.labels)}")
    click.echo(f"tau_kl: {document.tau_kl}")
    click.echo(np.array2string(document.model.pi, precision=3, suppress_small=True))


if __name__ == "__main__":
    cli()
