"""
Streaming detection pipeline, scripted scenarios, the single-regime baseline
and the ablation suite.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import chi2

from ..core.hmm import predict_regime
from ..core.kalman import GaussianState, filter_step
from ..core.model import (
    SwitchingModel,
    ensure_valid,
    resolve_controls,
    simulate_continuous,
)
from ..core.rng import make_rng
from ..errors import NumericalError
from ..utils.config import DetectionVariant, RunConfig
from .alerting import AlertRecord, build_alert, calibrate_tau_kl, kl_gate
from .onlineem import OnlineEmUpdater
from .parallel_processing import choose_processing_method
from .vsipc import VariationalResult, effective_params, infer

log = logging.getLogger(__name__)

ANOMALY_LABEL = "Anomaly"


@dataclass(frozen=True)
class BenignInjection:
    """Additive shift of ``magnitude`` observation-noise std devs on ``dims``."""

    window: int
    magnitude: float
    dims: Tuple[int, ...]


@dataclass(frozen=True)
class ScenarioScript:
    segments: Tuple[Tuple[int, int], ...]
    injections: Tuple[BenignInjection, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(tuple(s) for s in self.segments))
        object.__setattr__(self, "injections", tuple(self.injections))
        if not self.segments:
            raise ValueError("a scenario needs at least one segment")
        for regime, duration in self.segments:
            if duration < 1:
                raise ValueError("segment durations must be at least 1")
            if regime < 0:
                raise ValueError("regime labels must be non-negative")

    @property
    def length(self) -> int:
        return sum(duration for _, duration in self.segments)

    @property
    def onsets(self) -> List[Tuple[int, int]]:
        """``(window, regime)`` for every segment start after the first."""
        out, position = [], 0
        for regime, duration in self.segments:
            if position > 0:
                out.append((position, regime))
            position += duration
        return out

    def track(self) -> np.ndarray:
        return np.concatenate(
            [np.full(duration, regime, dtype=int) for regime, duration in self.segments]
        )

    def with_seed(self, seed: Optional[int]) -> "ScenarioScript":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Scenario:
    observations: np.ndarray
    regimes: np.ndarray
    latents: np.ndarray
    clean_observations: np.ndarray


def generate_scenario(
    script: ScenarioScript,
    model: SwitchingModel,
    controls: Optional[np.ndarray] = None,
) -> Scenario:
    """
    Sample a scenario with the regime path forced to the scripted track.

    Random draws follow :func:`regime_ssm.core.model.sample_trajectory`, so a
    single-segment script reproduces it under an identity transition matrix.
    Injections add ``magnitude * sqrt(R_dd)`` of the active regime to dim d.

    Raises:
        ValueError: for regime labels or injection targets out of range
    """
    ensure_valid(model)
    track = script.track()
    if track.max() >= model.K:
        raise ValueError(f"script uses regime {track.max()} but the model has {model.K}")
    rng = make_rng(script.seed)
    rng.random(len(track))  # path uniforms, unused when the path is scripted
    latents, clean = simulate_continuous(model, track, rng, controls)

    observations = clean.copy()
    for injection in script.injections:
        if not 0 <= injection.window < len(track):
            raise ValueError(f"injection window {injection.window} out of range")
        dims = np.asarray(injection.dims, dtype=int)
        if np.any(dims < 0) or np.any(dims >= model.m):
            raise ValueError("injection dims out of range")
        R = model.regimes[track[injection.window]].observation_noise_R
        observations[injection.window, dims] += injection.magnitude * np.sqrt(
            np.diag(R)[dims]
        )
    return Scenario(observations, track, latents, clean)


def killchain_script(
    seed: Optional[int] = None,
    normal: int = 720,
    recon: int = 480,
    intrusion: int = 300,
    exfiltration: int = 300,
) -> ScenarioScript:
    """Normal, then a reconnaissance ramp, intrusion and exfiltration (W = 1 s)."""
    return ScenarioScript(
        segments=((0, normal), (1, recon), (2, intrusion), (3, exfiltration)),
        seed=seed,
    )


@dataclass(frozen=True)
class BeliefState:
    window_id: int
    timestamp: float
    stage_posterior: np.ndarray
    predicted_posterior: np.ndarray
    kl_score: float
    entropy: float
    alert: bool
    score: float


@dataclass(frozen=True)
class ParameterSnapshot:
    batch_index: int
    window_id: int
    model: SwitchingModel
    tau_kl: Optional[float]


@dataclass
class DetectionResult:
    variant: DetectionVariant
    labels: Tuple[str, ...]
    beliefs: List[BeliefState] = field(default_factory=list)
    alerts: List[AlertRecord] = field(default_factory=list)
    model: Optional[SwitchingModel] = None
    tau_kl: Optional[float] = None
    batch_latencies: List[Tuple[int, float]] = field(default_factory=list)
    elbo_trace: List[float] = field(default_factory=list)
    snapshots: List[ParameterSnapshot] = field(default_factory=list)
    calibration_windows: int = 0

    @property
    def has_stage_attribution(self) -> bool:
        return self.variant is not DetectionVariant.SINGLE_REGIME

    def gamma_matrix(self) -> Optional[np.ndarray]:
        if not self.has_stage_attribution:
            return None
        return np.stack([b.stage_posterior for b in self.beliefs])

    def alert_flags(self) -> np.ndarray:
        return np.array([b.alert for b in self.beliefs], dtype=bool)

    def kl_scores(self) -> np.ndarray:
        return np.array([b.kl_score for b in self.beliefs])

    def timestamps(self) -> np.ndarray:
        return np.array([b.timestamp for b in self.beliefs])

    def latency_ms(self) -> np.ndarray:
        """Per-observation wall time in milliseconds, one entry per window."""
        out = [
            np.full(count, 1000.0 * seconds / count)
            for count, seconds in self.batch_latencies
        ]
        return np.concatenate(out) if out else np.zeros(0)

    def beliefs_frame(self) -> pd.DataFrame:
        """Window id, posterior columns, KL score, entropy and alert flag."""
        rows = []
        for b in self.beliefs:
            row: Dict[str, object] = {"window_id": b.window_id, "timestamp": b.timestamp}
            if self.has_stage_attribution:
                for label, value in zip(self.labels, b.stage_posterior):
                    row[f"gamma_{label}"] = value
            row["kl_score"] = b.kl_score
            row["elbo_entropy"] = b.entropy
            row["score"] = b.score
            row["alert"] = b.alert
            rows.append(row)
        return pd.DataFrame(rows)


def _offset_error(exc: NumericalError, offset: int) -> NumericalError:
    time_index = None if exc.time_index is None else offset + exc.time_index
    return NumericalError(
        exc.message, time_index=time_index, regime=exc.regime, iteration=exc.iteration
    )


def _calibration_scores(
    pairs: Sequence[Tuple[np.ndarray, Optional[np.ndarray]]], pi: np.ndarray
) -> List[float]:
    """KL scores of the calibration windows under the transition matrix ``pi``."""
    return [
        0.0 if previous is None else kl_gate(current, previous, pi)
        for current, previous in pairs
    ]


class DetectionPipeline:
    """
    Batch-wise streaming detector.

    Each batch runs variational inference, scores every step with the KL gate,
    emits alerts once the calibration period is over, then folds the batch
    into the online parameter updates. The final filtered belief of a batch
    seeds the next one.
    The KL threshold is fitted once the calibration windows are over, scoring
    them under the transition matrix in force at that point.
    """

    def __init__(self, model: SwitchingModel, config: Optional[RunConfig] = None):
        ensure_valid(model)
        self.model = model
        self.config = config or RunConfig()

    @property
    def variant(self) -> DetectionVariant:
        return self.config.detection.variant

    def _initial_regime_dist(self) -> np.ndarray:
        dist = self.config.detection.initial_regime_dist
        if dist is None:
            return np.full(self.model.K, 1.0 / self.model.K)
        dist = np.asarray(dist, dtype=float)
        if dist.shape != (self.model.K,):
            raise ValueError("initial_regime_dist must have one entry per regime")
        return dist

    def run(
        self,
        observations: np.ndarray,
        timestamps: Optional[np.ndarray] = None,
        controls: Optional[np.ndarray] = None,
    ) -> DetectionResult:
        """
        Process a whole observation stream.

        Args:
            observations: T x m
            timestamps: window start times (default ``window_id * W``)
            controls: optional control inputs

        Returns:
            DetectionResult

        Raises:
            NumericalError: with the stream position of the failing step
        """
        Y = np.atleast_2d(np.asarray(observations, dtype=float))
        T = Y.shape[0]
        if T < 1:
            raise ValueError("empty observation stream")
        if Y.shape[1] != self.model.m:
            raise ValueError(f"observations have {Y.shape[1]} columns, model expects {self.model.m}")
        if timestamps is None:
            timestamps = np.arange(T) * self.config.detection.window_seconds
        U = resolve_controls(self.model, controls, T)
        if self.variant is DetectionVariant.SINGLE_REGIME:
            return self._run_baseline(Y, np.asarray(timestamps, dtype=float), U)
        return self._run_switching(Y, np.asarray(timestamps, dtype=float), U)

    def _run_switching(self, Y, timestamps, U) -> DetectionResult:
        cfg = self.config
        detection = cfg.detection
        adapt = self.variant is not DetectionVariant.STATIC
        updater = OnlineEmUpdater(self.model, cfg.online_em) if adapt else None
        current = self.model
        result = DetectionResult(
            self.variant, current.labels, calibration_windows=detection.calibration_windows
        )

        carry_dist = self._initial_regime_dist()
        carry_mean = current.initial_state_mean
        carry_cov = current.initial_state_cov
        gamma_prev: Optional[np.ndarray] = None
        # (gamma_t, gamma_{t-1}) of the calibration windows
        calibration_pairs: List[Tuple[np.ndarray, Optional[np.ndarray]]] = []
        # None until the calibration period ends
        tau: Optional[float] = None
        if self.variant is DetectionVariant.NO_KL_GATE:
            tau = -np.inf
        elif detection.calibration_windows == 0:
            tau = calibrate_tau_kl([], cfg.gate)

        T = Y.shape[0]
        batch_size = detection.batch_size
        for batch_index, offset in enumerate(range(0, T, batch_size)):
            stop = min(offset + batch_size, T)
            start_time = time.perf_counter()
            batch_model = current.replace(
                initial_regime_dist=carry_dist,
                initial_state_mean=carry_mean,
                initial_state_cov=carry_cov,
            )
            try:
                inference = infer(batch_model, Y[offset:stop], U[offset:stop], cfg.inference)
            except NumericalError as exc:
                log.error("inference failed in batch %d", batch_index)
                raise _offset_error(exc, offset) from exc

            entropies = inference.posteriors.entropy_prefix()
            gamma = inference.posteriors.gamma
            for t in range(stop - offset):
                g = offset + t
                previous = gamma_prev
                kl = 0.0 if previous is None else kl_gate(gamma[t], previous, current.pi)
                gamma_prev = gamma[t]
                calibrating = g < detection.calibration_windows
                if calibrating:
                    calibration_pairs.append((gamma[t], previous))
                elif tau is None:
                    tau = calibrate_tau_kl(
                        _calibration_scores(calibration_pairs, current.pi), cfg.gate
                    )
                alert = None
                if not calibrating:
                    alert = build_alert(
                        timestamps[g],
                        gamma[t],
                        kl,
                        entropies[t],
                        current.pi,
                        cfg.gate,
                        current.labels,
                        threshold=tau,
                    )
                if alert is not None:
                    result.alerts.append(alert)
                result.beliefs.append(
                    BeliefState(
                        window_id=g,
                        timestamp=float(timestamps[g]),
                        stage_posterior=gamma[t].copy(),
                        predicted_posterior=predict_regime(gamma[t], current.pi, 1),
                        kl_score=kl,
                        entropy=float(entropies[t]),
                        alert=alert is not None,
                        score=kl,
                    )
                )

            if updater is not None:
                current = updater.apply(inference, U[offset:stop])
            carry_dist, carry_mean, carry_cov = self._carry_over(
                current, inference, U[stop] if stop < T else None
            )
            elapsed = time.perf_counter() - start_time
            result.batch_latencies.append((stop - offset, elapsed))
            result.elbo_trace.append(inference.elbo)
            log.info(
                "batch %d: windows %d-%d, %d iteration(s), %d alert(s) so far",
                batch_index,
                offset,
                stop - 1,
                inference.iterations,
                len(result.alerts),
            )
            every = detection.snapshot_every
            if every and (batch_index + 1) % every == 0:
                result.snapshots.append(
                    ParameterSnapshot(batch_index, stop - 1, current, tau)
                )

        if tau is None:
            tau = calibrate_tau_kl(
                _calibration_scores(calibration_pairs, current.pi), cfg.gate
            )
        result.model = current
        result.tau_kl = None if self.variant is DetectionVariant.NO_KL_GATE else tau
        return result

    @staticmethod
    def _carry_over(
        model: SwitchingModel,
        inference: VariationalResult,
        next_control: Optional[np.ndarray],
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Predict the regime and state beliefs one step past the batch."""
        gamma_last = inference.posteriors.gamma[-1]
        predicted = predict_regime(gamma_last, model.pi, 1)
        mean = inference.smoothed.means[-1]
        cov = inference.smoothed.covariances[-1]
        A_eff, Q_eff = effective_params(predicted, model.regimes, cov)
        next_mean = A_eff @ mean
        if next_control is not None:
            next_mean = next_mean + next_control
        next_cov = A_eff @ cov @ A_eff.T + Q_eff
        return predicted, next_mean, 0.5 * (next_cov + next_cov.T)

    def _run_baseline(self, Y, timestamps, U) -> DetectionResult:
        """Single-regime Kalman filter scored by squared innovation Mahalanobis distance."""
        detection = self.config.detection
        params = self.model.regimes[0]
        labels = (self.model.labels[0],)
        threshold = float(chi2.ppf(detection.baseline_level, self.model.m))
        result = DetectionResult(
            self.variant,
            labels,
            tau_kl=threshold,
            calibration_windows=detection.calibration_windows,
        )
        state = GaussianState(self.model.initial_state_mean, self.model.initial_state_cov)
        T = Y.shape[0]
        one = np.ones(1)
        for offset in range(0, T, detection.batch_size):
            stop = min(offset + detection.batch_size, T)
            start_time = time.perf_counter()
            for g in range(offset, stop):
                step = filter_step(state, Y[g], U[g], params, g, predict_first=g > 0)
                state = step.updated
                score = step.mahalanobis
                flagged = g >= detection.calibration_windows and score > threshold
                if flagged:
                    result.alerts.append(
                        AlertRecord(
                            timestamp=float(timestamps[g]),
                            stage_posterior=(1.0,),
                            kl_score=float(score),
                            elbo_entropy=0.0,
                            current_stage=ANOMALY_LABEL,
                            predicted_stage=ANOMALY_LABEL,
                            predicted_posterior=(1.0,),
                        )
                    )
                result.beliefs.append(
                    BeliefState(g, float(timestamps[g]), one, one, 0.0, 0.0, flagged, score)
                )
            result.batch_latencies.append((stop - offset, time.perf_counter() - start_time))
        result.model = self.model
        log.info("baseline flagged %d of %d windows", len(result.alerts), T)
        return result


def run_detection(
    observations: np.ndarray,
    model: SwitchingModel,
    config: Optional[RunConfig] = None,
    timestamps: Optional[np.ndarray] = None,
    controls: Optional[np.ndarray] = None,
) -> DetectionResult:
    """Run :class:`DetectionPipeline` over one stream."""
    return DetectionPipeline(model, config).run(observations, timestamps, controls)


def with_variant(config: RunConfig, variant: DetectionVariant) -> RunConfig:
    return replace(config, detection=replace(config.detection, variant=variant))


def drifted_model(
    model: SwitchingModel, noise_scale: float = 2.0, transition: Optional[np.ndarray] = None
) -> SwitchingModel:
    """Generator whose observation noise (and optionally Pi) departs from ``model``."""
    return model.with_noise(
        observation_noise=[r.observation_noise_R * noise_scale for r in model.regimes],
        transition=transition,
    )


def _ablation_chunk(args) -> List[Tuple[int, Dict[str, object]]]:
    """Worker: run detection + evaluation for a chunk of (variant, seed) items."""
    from .evaluation import evaluate

    (script, detector_model, generator_model, config, onset_regime), items, start_idx = args
    rows = []
    for i, (variant, seed) in enumerate(items):
        scenario = generate_scenario(script.with_seed(seed), generator_model)
        detection = run_detection(
            scenario.observations, detector_model, with_variant(config, variant)
        )
        report = evaluate(detection, scenario.regimes, onset_regime=onset_regime)
        rows.append((start_idx + i, {"variant": variant.value, "seed": seed, **report.summary()}))
    return rows


def run_ablation(
    script: ScenarioScript,
    model: SwitchingModel,
    config: Optional[RunConfig] = None,
    variants: Sequence[DetectionVariant] = tuple(DetectionVariant),
    seeds: Sequence[int] = (0, 1, 2),
    generator_model: Optional[SwitchingModel] = None,
    onset_regime: Optional[int] = None,
    max_workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    Evaluate each detection variant on the same scripted scenarios.

    ``generator_model`` (default: ``model``) draws the data while ``model``
    initialises the detector, so a mismatch between them is the drift the
    adaptive variants have to absorb.

    Returns:
        DataFrame with one row per (variant, seed)
    """
    config = config or RunConfig()
    items = [(variant, seed) for variant in variants for seed in seeds]
    rows = choose_processing_method(
        _ablation_chunk,
        items,
        (script, model, generator_model or model, config, onset_regime),
        max_workers=max_workers,
        parallel_threshold=8,
        unit="runs",
    )
    return pd.DataFrame(rows)


def summarize_ablation(table: pd.DataFrame) -> pd.DataFrame:
    """Mean of each metric per variant."""
    metrics = [c for c in table.columns if c not in ("variant", "seed")]
    return table.groupby("variant", sort=False)[metrics].mean(numeric_only=True)


@dataclass(frozen=True)
class GateScores:
    benign: np.ndarray
    transition: np.ndarray


def gate_scores(
    detection: DetectionResult,
    script: ScenarioScript,
    before: int = 3,
    after: int = 5,
) -> GateScores:
    """
    Peak KL score around every benign injection and every scripted transition.

    Events inside the calibration period are skipped.
    """
    kl = detection.kl_scores()
    T = len(kl)

    def peak(center: int) -> float:
        return float(kl[max(center - before, 0) : min(center + after + 1, T)].max())

    calibration = detection.calibration_windows
    benign = [peak(i.window) for i in script.injections if i.window >= calibration]
    transition = [peak(w) for w, _ in script.onsets if w >= calibration]
    return GateScores(np.array(benign), np.array(transition))


def benign_transition_script(
    seed: Optional[int] = None,
    cycles: int = 4,
    normal: int = 240,
    attack: int = 120,
    injections_per_cycle: int = 4,
    magnitude: float = 5.0,
    dims: Tuple[int, ...] = (0,),
) -> ScenarioScript:
    """
    Alternating Normal / Reconnaissance segments with benign shifts inside Normal.

    Shifts land on timing features, which every regime models identically.
    """
    segments: List[Tuple[int, int]] = []
    injections: List[BenignInjection] = []
    position = 0
    spacing = normal // (injections_per_cycle + 1)
    for _ in range(cycles):
        segments.append((0, normal))
        for k in range(1, injections_per_cycle + 1):
            injections.append(BenignInjection(position + k * spacing, magnitude, dims))
        position += normal
        segments.append((1, attack))
        position += attack
    segments.append((0, normal))
    return ScenarioScript(tuple(segments), tuple(injections), seed)
