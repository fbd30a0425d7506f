"""
File formats: model / parameter-snapshot JSON, flow-record and observation
CSVs, belief CSVs, alert JSON-lines and exact-posterior JSON.

Model JSON schema::

    {
        "K": 4, "n": 8, "m": 17,
        "labels": ["Normal", ...],
        "pi": [[...], ...],                    # K x K, row-major
        "initial_regime_dist": [...],
        "initial_state_mean": [...],
        "initial_state_cov": [[...], ...],
        "control_input": null,
        "regimes": [{"A": [[...]], "C": [[...]], "Q": [[...]], "R": [[...]]}, ...]
    }

A parameter snapshot is the same document plus ``tau_kl``, ``window_id`` and
an optional ``normalizer`` object.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..analysis.alerting import AlertRecord
from ..analysis.evaluation import EvaluationReport
from ..analysis.harness import BeliefState, DetectionResult
from ..analysis.oracle import ExactPosterior
from ..core.feov import FEATURE_NAMES, FlowRecord, NormalizerState
from ..core.model import (
    RegimeParams,
    SwitchingModel,
    TransitionMatrix,
    ValidationReport,
    ViolationCode,
    ensure_valid,
)
from ..errors import ModelValidationError
from .config import DetectionVariant

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

HISTOGRAM_BINS = 256
META_COLUMNS = ("window_id", "window_start", "regime", "label")

FLOW_COLUMNS = (
    "timestamp",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "bytes",
    "packets",
)
OPTIONAL_FLOW_COLUMNS = (
    "duration",
    "syn_count",
    "ack_count",
    "fragment_count",
    "connection_failed",
    "dns_query_count",
    "icmp_count",
    "http_method",
    "payload_histogram",
    "payload_lengths",
    "inbound",
)


def _schema_error(location: str, detail: str) -> ModelValidationError:
    report = ValidationReport()
    report.add(ViolationCode.BAD_CONFIG, location, detail)
    return ModelValidationError(report)


# ---------------------------------------------------------------------------
# model and parameter snapshots
# ---------------------------------------------------------------------------


def model_to_dict(model: SwitchingModel) -> Dict[str, Any]:
    return {
        "K": model.K,
        "n": model.n,
        "m": model.m,
        "labels": list(model.labels),
        "pi": model.pi.tolist(),
        "initial_regime_dist": model.initial_regime_dist.tolist(),
        "initial_state_mean": model.initial_state_mean.tolist(),
        "initial_state_cov": model.initial_state_cov.tolist(),
        "control_input": None
        if model.control_input is None
        else model.control_input.tolist(),
        "regimes": [
            {
                "A": r.transition_A.tolist(),
                "C": r.observation_C.tolist(),
                "Q": r.process_noise_Q.tolist(),
                "R": r.observation_noise_R.tolist(),
            }
            for r in model.regimes
        ],
    }


def model_from_dict(data: Mapping[str, Any]) -> SwitchingModel:
    """
    Parse and validate a model document.

    Raises:
        ModelValidationError: on missing keys, mismatched declared dims or an
            invalid model
    """
    try:
        regimes = tuple(
            RegimeParams(r["A"], r["C"], r["Q"], r["R"]) for r in data["regimes"]
        )
        model = SwitchingModel(
            regimes=regimes,
            transition=TransitionMatrix(np.asarray(data["pi"], dtype=float)),
            initial_regime_dist=data["initial_regime_dist"],
            initial_state_mean=data["initial_state_mean"],
            initial_state_cov=data["initial_state_cov"],
            control_input=data.get("control_input"),
            labels=tuple(data.get("labels") or ()),
        )
    except KeyError as exc:
        raise _schema_error("model", f"missing key {exc}") from exc
    except (TypeError, ValueError, IndexError) as exc:
        raise _schema_error("model", str(exc)) from exc

    for key, actual in (("K", model.K), ("n", model.n), ("m", model.m)):
        if key in data and int(data[key]) != actual:
            report = ValidationReport()
            report.add(
                ViolationCode.DIMENSION_MISMATCH,
                f"model.{key}",
                f"declared {data[key]}, arrays imply {actual}",
            )
            raise ModelValidationError(report)
    ensure_valid(model)
    return model


def save_model(model: SwitchingModel, path: PathLike):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2)
    log.info("model written to %s", path)


def load_model(path: PathLike) -> SwitchingModel:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    return model_from_dict(data)


def normalizer_to_dict(state: NormalizerState) -> Dict[str, Any]:
    return {
        "count": state.count,
        "mean": state.mean.tolist(),
        "m2": state.m2.tolist(),
        "frozen": state.frozen,
        "variance_floor": state.variance_floor,
    }


def normalizer_from_dict(data: Mapping[str, Any]) -> NormalizerState:
    return NormalizerState(
        count=int(data["count"]),
        mean=np.asarray(data["mean"], dtype=float),
        m2=np.asarray(data["m2"], dtype=float),
        frozen=bool(data.get("frozen", True)),
        variance_floor=float(data.get("variance_floor", 1e-6)),
    )


@dataclass(frozen=True)
class ParameterDocument:
    model: SwitchingModel
    tau_kl: Optional[float] = None
    window_id: Optional[int] = None
    normalizer: Optional[NormalizerState] = None


def save_params(
    model: SwitchingModel,
    path: PathLike,
    tau_kl: Optional[float] = None,
    window_id: Optional[int] = None,
    normalizer: Optional[NormalizerState] = None,
):
    """Write a parameter snapshot (model schema plus gate and normaliser state)."""
    data = model_to_dict(model)
    data["tau_kl"] = None if tau_kl is None or not np.isfinite(tau_kl) else float(tau_kl)
    data["window_id"] = window_id
    data["normalizer"] = None if normalizer is None else normalizer_to_dict(normalizer)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    log.info("parameter snapshot written to %s", path)


def load_params(path: PathLike) -> ParameterDocument:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    normalizer = data.get("normalizer")
    return ParameterDocument(
        model=model_from_dict(data),
        tau_kl=data.get("tau_kl"),
        window_id=data.get("window_id"),
        normalizer=None if normalizer is None else normalizer_from_dict(normalizer),
    )


# ---------------------------------------------------------------------------
# flow records
# ---------------------------------------------------------------------------


def parse_payload_histogram(text) -> Optional[tuple]:
    """
    Parse a payload byte histogram cell.

    Two encodings are accepted: 256 ``;``-separated counts, or sparse
    ``offset:count`` entries separated by ``;`` (byte values not listed are 0).
    Empty cells give None.
    """
    if text is None or (isinstance(text, float) and np.isnan(text)):
        return None
    text = str(text).strip()
    if not text:
        return None
    parts = [p for p in text.split(";") if p.strip()]
    if any(":" in p for p in parts):
        counts = [0] * HISTOGRAM_BINS
        for part in parts:
            offset, count = part.split(":", 1)
            offset = int(offset)
            if not 0 <= offset < HISTOGRAM_BINS:
                raise ValueError(f"histogram offset {offset} outside 0..255")
            counts[offset] += int(count)
        return tuple(counts)
    if len(parts) != HISTOGRAM_BINS:
        raise ValueError(f"histogram needs {HISTOGRAM_BINS} counts, got {len(parts)}")
    return tuple(int(p) for p in parts)


def _cell(row: Mapping[str, Any], key: str, default=None):
    value = row.get(key, default)
    if value is None:
        return default
    if isinstance(value, float) and np.isnan(value):
        return default
    if isinstance(value, str) and not value.strip():
        return default
    return value


def _as_bool(value) -> Optional[bool]:
    if value is None:
        return None
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "in", "inbound")
    return bool(value)


def read_flow_records(path: PathLike) -> List[FlowRecord]:
    """
    Read flow records from CSV.

    Required columns: timestamp, src_ip, dst_ip, src_port, dst_port, protocol,
    bytes, packets. Optional columns may be missing or empty: duration,
    syn_count, ack_count, fragment_count, connection_failed, dns_query_count,
    icmp_count, http_method, payload_histogram, payload_lengths (``;``
    separated), inbound.
    """
    frame = pd.read_csv(path, keep_default_na=True)
    missing = [c for c in FLOW_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"flow CSV is missing columns {missing}")

    records = []
    for row in frame.to_dict(orient="records"):
        lengths = _cell(row, "payload_lengths")
        records.append(
            FlowRecord(
                timestamp=float(row["timestamp"]),
                src_ip=str(row["src_ip"]),
                dst_ip=str(row["dst_ip"]),
                src_port=int(row["src_port"]),
                dst_port=int(row["dst_port"]),
                protocol=str(row["protocol"]),
                bytes=int(row["bytes"]),
                packets=int(row["packets"]),
                duration=float(_cell(row, "duration", 0.0)),
                syn_count=int(_cell(row, "syn_count", 0)),
                ack_count=int(_cell(row, "ack_count", 0)),
                fragment_count=int(_cell(row, "fragment_count", 0)),
                connection_failed=bool(_as_bool(_cell(row, "connection_failed", False))),
                dns_query_count=int(_cell(row, "dns_query_count", 0)),
                icmp_count=int(_cell(row, "icmp_count", 0)),
                http_method=_cell(row, "http_method"),
                payload_histogram=parse_payload_histogram(_cell(row, "payload_histogram")),
                payload_length_values=tuple(
                    float(v) for v in str(lengths).split(";") if v.strip()
                )
                if lengths is not None
                else (),
                inbound=_as_bool(_cell(row, "inbound")),
            )
        )
    log.info("read %d flow records from %s", len(records), path)
    return records


def write_flow_records(records: Iterable[FlowRecord], path: PathLike):
    """Write flow records in the layout :func:`read_flow_records` accepts."""
    rows = []
    for r in records:
        rows.append(
            {
                "timestamp": r.timestamp,
                "src_ip": r.src_ip,
                "dst_ip": r.dst_ip,
                "src_port": r.src_port,
                "dst_port": r.dst_port,
                "protocol": r.protocol,
                "bytes": r.bytes,
                "packets": r.packets,
                "duration": r.duration,
                "syn_count": r.syn_count,
                "ack_count": r.ack_count,
                "fragment_count": r.fragment_count,
                "connection_failed": int(r.connection_failed),
                "dns_query_count": r.dns_query_count,
                "icmp_count": r.icmp_count,
                "http_method": r.http_method or "",
                "payload_histogram": ";".join(
                    f"{i}:{c}" for i, c in enumerate(r.payload_histogram) if c
                )
                if r.payload_histogram
                else "",
                "payload_lengths": ";".join(str(v) for v in r.payload_length_values),
                "inbound": "" if r.inbound is None else int(r.inbound),
            }
        )
    pd.DataFrame(rows, columns=list(FLOW_COLUMNS + OPTIONAL_FLOW_COLUMNS)).to_csv(
        path, index=False
    )


# ---------------------------------------------------------------------------
# observations and beliefs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationTable:
    """Observation matrix read from CSV with optional ground truth."""

    values: np.ndarray
    timestamps: np.ndarray
    window_ids: np.ndarray
    columns: tuple
    truth: Optional[np.ndarray] = None


def observation_columns(m: int) -> tuple:
    return FEATURE_NAMES if m == len(FEATURE_NAMES) else tuple(f"y_{i}" for i in range(m))


def write_observations(
    observations: np.ndarray,
    path: PathLike,
    timestamps: Optional[np.ndarray] = None,
    regimes: Optional[np.ndarray] = None,
    latents: Optional[np.ndarray] = None,
):
    """
    Write an observation CSV: window_id, window_start, optional regime and
    latent columns ``x_i``, then one column per observation dimension.
    """
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    T, m = Y.shape
    frame = pd.DataFrame(
        {
            "window_id": np.arange(T),
            "window_start": np.arange(T, dtype=float) if timestamps is None else timestamps,
        }
    )
    if regimes is not None:
        frame["regime"] = np.asarray(regimes, dtype=int)
    if latents is not None:
        X = np.atleast_2d(np.asarray(latents, dtype=float))
        for i in range(X.shape[1]):
            frame[f"x_{i}"] = X[:, i]
    for i, name in enumerate(observation_columns(m)):
        frame[name] = Y[:, i]
    frame.to_csv(path, index=False)
    log.info("wrote %d observations to %s", T, path)


def read_observations(
    path: PathLike, label_map: Optional[Mapping[str, int]] = None
) -> ObservationTable:
    """
    Read an observation CSV (from ``simulate``, ``featurize`` or a
    pre-featurised dataset).

    Ground truth comes from an integer ``regime`` column, or from a ``label``
    column mapped to regimes through ``label_map``.

    Raises:
        ValueError: if a label has no mapping
    """
    frame = pd.read_csv(path)
    value_columns = [
        c for c in frame.columns if c not in META_COLUMNS and not str(c).startswith("x_")
    ]
    if not value_columns:
        raise ValueError(f"{path} has no observation columns")
    T = len(frame)
    timestamps = (
        frame["window_start"].to_numpy(dtype=float)
        if "window_start" in frame
        else np.arange(T, dtype=float)
    )
    window_ids = (
        frame["window_id"].to_numpy(dtype=int) if "window_id" in frame else np.arange(T)
    )

    truth = None
    if "regime" in frame:
        truth = frame["regime"].to_numpy(dtype=int)
    elif "label" in frame:
        labels = frame["label"].astype(str)
        if label_map:
            unknown = sorted(set(labels) - set(label_map))
            if unknown:
                raise ValueError(f"labels without a regime mapping: {unknown}")
            truth = labels.map(label_map).to_numpy(dtype=int)
        else:
            truth = pd.to_numeric(labels).to_numpy(dtype=int)

    return ObservationTable(
        values=frame[value_columns].to_numpy(dtype=float),
        timestamps=timestamps,
        window_ids=window_ids,
        columns=tuple(value_columns),
        truth=truth,
    )


def write_beliefs(detection: DetectionResult, path: PathLike):
    detection.beliefs_frame().to_csv(path, index=False)
    log.info("wrote %d beliefs to %s", len(detection.beliefs), path)


def write_alerts(alerts: Iterable[AlertRecord], path: PathLike) -> int:
    """Write alerts as JSON-lines; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for alert in alerts:
            f.write(alert.to_json() + "\n")
            count += 1
    log.info("wrote %d alerts to %s", count, path)
    return count


def read_alerts(path: PathLike) -> List[AlertRecord]:
    alerts = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                alerts.append(AlertRecord.from_dict(json.loads(line)))
    return alerts


def read_detection(
    beliefs_path: PathLike, alerts_path: Optional[PathLike] = None
) -> DetectionResult:
    """
    Rebuild a DetectionResult from a beliefs CSV and an alerts file.

    Latency and bound traces are not stored in these files, so the rebuilt
    result reports zero latency and no final bound.
    """
    frame = pd.read_csv(beliefs_path)
    gamma_columns = [c for c in frame.columns if str(c).startswith("gamma_")]
    labels = tuple(c[len("gamma_") :] for c in gamma_columns) or ("Anomaly",)
    variant = DetectionVariant.FULL if gamma_columns else DetectionVariant.SINGLE_REGIME
    detection = DetectionResult(variant, labels)
    gamma = frame[gamma_columns].to_numpy(dtype=float) if gamma_columns else None
    for i, row in enumerate(frame.itertuples(index=False)):
        posterior = gamma[i] if gamma is not None else np.ones(1)
        detection.beliefs.append(
            BeliefState(
                window_id=int(row.window_id),
                timestamp=float(row.timestamp),
                stage_posterior=posterior,
                predicted_posterior=posterior,
                kl_score=float(row.kl_score),
                entropy=float(row.elbo_entropy),
                alert=bool(row.alert),
                score=float(row.score),
            )
        )
    if alerts_path is not None:
        detection.alerts.extend(read_alerts(alerts_path))
    return detection


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def write_json(data: Any, path: PathLike):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=_json_default)


def write_report(report: EvaluationReport, path: PathLike):
    write_json(report.to_dict(), path)
    log.info("evaluation report written to %s", path)


def exact_posterior_to_dict(
    exact: ExactPosterior, labels: Optional[Sequence[str]] = None
) -> Dict[str, Any]:
    """Regime marginals, pairwise marginals and evidence of an enumeration."""
    return {
        "num_paths": exact.num_components,
        "labels": None if labels is None else list(labels),
        "log_evidence": exact.exact_log_evidence,
        "gamma": exact.exact_gamma.tolist(),
        "xi": exact.exact_xi.tolist(),
        "state_means": None
        if exact.state_means is None
        else [exact.state_mean(t).tolist() for t in range(exact.exact_gamma.shape[0])],
    }


def write_exact_posterior(
    exact: ExactPosterior, path: PathLike, labels: Optional[Sequence[str]] = None
):
    write_json(exact_posterior_to_dict(exact, labels), path)
    log.info("exact posterior over %d paths written to %s", exact.num_components, path)
