"""
Flow-entropy observation vectors.

Flow records are grouped into time windows, each window is reduced to a
17-dimensional raw feature vector, and raw vectors are z-scored with Welford
statistics gathered over a calibration period.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import UnsortedRecordsError

log = logging.getLogger(__name__)

NUM_FEATURES = 17
VARIANCE_FLOOR = 1e-6

FEATURE_NAMES: Tuple[str, ...] = (
    "iat_mean",
    "iat_var",
    "bytes_per_packet",
    "flow_duration",
    "dst_port_entropy",
    "unique_dst_ips",
    "protocol_entropy",
    "syn_ack_ratio",
    "payload_byte_entropy",
    "payload_length_var",
    "in_out_byte_ratio",
    "in_out_packet_ratio",
    "fragment_rate",
    "connection_failure_rate",
    "dns_query_rate",
    "icmp_rate",
    "http_method_entropy",
)

FEATURE_GROUPS: Dict[str, Tuple[int, ...]] = {
    "timing": (0, 1, 2, 3),
    "port_diversity": (4, 5, 6, 7),
    "payload": (8, 9, 10, 11, 12),
    "stateful": (13, 14, 15, 16),
}


@dataclass(frozen=True)
class FlowRecord:
    """One aggregated flow. Optional fields contribute zero when missing."""

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    bytes: int
    packets: int
    duration: float = 0.0
    syn_count: int = 0
    ack_count: int = 0
    fragment_count: int = 0
    connection_failed: bool = False
    dns_query_count: int = 0
    icmp_count: int = 0
    http_method: Optional[str] = None
    payload_histogram: Optional[Tuple[int, ...]] = None
    payload_length_values: Tuple[float, ...] = field(default=())
    inbound: Optional[bool] = None


@dataclass(frozen=True)
class FlowWindow:
    window_id: int
    start: float
    records: Tuple[FlowRecord, ...]


@dataclass(frozen=True)
class ObservationVector:
    window_id: int
    window_start: float
    values: np.ndarray


def window_flows(
    records: Sequence[FlowRecord],
    window_seconds: float = 1.0,
    stride: Optional[float] = None,
) -> List[FlowWindow]:
    """
    Group time-sorted records into windows aligned to the first record.

    Tumbling windows (``stride`` None or equal to the width) assign each record
    to window ``floor((t - t0) / W)``; empty windows in between are emitted so
    the window sequence has no gaps. A smaller stride gives overlapping windows
    ``[t0 + k * stride, t0 + k * stride + W)``.

    Raises:
        ValueError: for non-positive width or stride
        UnsortedRecordsError: if timestamps decrease
    """
    if window_seconds <= 0:
        raise ValueError("window width must be positive")
    if stride is not None and stride <= 0:
        raise ValueError("stride must be positive")
    if not records:
        return []
    for i in range(1, len(records)):
        if records[i].timestamp < records[i - 1].timestamp:
            raise UnsortedRecordsError(i, records[i - 1].timestamp, records[i].timestamp)

    t0 = records[0].timestamp
    if stride is None or stride == window_seconds:
        buckets: Dict[int, List[FlowRecord]] = {}
        for record in records:
            idx = int(math.floor((record.timestamp - t0) / window_seconds))
            buckets.setdefault(idx, []).append(record)
        last = max(buckets)
        return [
            FlowWindow(k, t0 + k * window_seconds, tuple(buckets.get(k, ())))
            for k in range(last + 1)
        ]

    t_end = records[-1].timestamp
    num_windows = int(math.floor((t_end - t0) / stride)) + 1
    starts = np.array([t0 + k * stride for k in range(num_windows)])
    stamps = np.array([r.timestamp for r in records])
    windows = []
    for k, start in enumerate(starts):
        lo = int(np.searchsorted(stamps, start, side="left"))
        hi = int(np.searchsorted(stamps, start + window_seconds, side="left"))
        windows.append(FlowWindow(k, float(start), tuple(records[lo:hi])))
    return windows


def shannon_entropy_bits(counts: Iterable[float]) -> float:
    """Entropy in bits of a count vector; empty or all-zero counts give 0."""
    values = [c for c in counts if c > 0]
    total = math.fsum(values)
    if total <= 0:
        return 0.0
    return -math.fsum((c / total) * math.log2(c / total) for c in sorted(values))


def _category_entropy(tokens: Iterable) -> float:
    counts = Counter(tokens)
    return shannon_entropy_bits(counts[key] for key in sorted(counts, key=str))


def _population_variance(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = math.fsum(values) / len(values)
    return math.fsum((v - mean) ** 2 for v in sorted(values)) / len(values)


def _ratio(numerator: float, denominator: float) -> float:
    """Ratio with the zero-denominator rule: fall back to the numerator."""
    return numerator / denominator if denominator > 0 else float(numerator)


def extract_features(
    window: Sequence[FlowRecord], window_seconds: float = 1.0
) -> np.ndarray:
    """
    Reduce one window of flows to the 17 raw features.

    The result does not depend on record order. Entropies are in bits.

    Args:
        window: records in the window (any order)
        window_seconds: width used to turn counts into rates

    Returns:
        np.ndarray: raw feature vector of length 17
    """
    if window_seconds <= 0:
        raise ValueError("window width must be positive")
    raw = np.zeros(NUM_FEATURES)
    records = list(window)
    if not records:
        return raw

    stamps = sorted(r.timestamp for r in records)
    if len(stamps) >= 2:
        gaps = [b - a for a, b in zip(stamps[:-1], stamps[1:])]
        raw[0] = math.fsum(gaps) / len(gaps)
        raw[1] = _population_variance(gaps)
    total_bytes = sum(r.bytes for r in records)
    total_packets = sum(r.packets for r in records)
    raw[2] = total_bytes / total_packets if total_packets > 0 else 0.0
    raw[3] = math.fsum(sorted(r.duration for r in records)) / len(records)

    raw[4] = _category_entropy(r.dst_port for r in records)
    raw[5] = float(len({r.dst_ip for r in records}))
    raw[6] = _category_entropy(r.protocol for r in records)
    raw[7] = _ratio(sum(r.syn_count for r in records), sum(r.ack_count for r in records))

    histograms = [r.payload_histogram for r in records if r.payload_histogram]
    if histograms:
        pooled = np.sum(np.asarray(histograms, dtype=float), axis=0)
        raw[8] = shannon_entropy_bits(pooled)
    lengths = [v for r in records for v in r.payload_length_values]
    raw[9] = _population_variance(lengths)
    inbound = [r for r in records if r.inbound is True]
    outbound = [r for r in records if r.inbound is False]
    if inbound or outbound:
        raw[10] = _ratio(sum(r.bytes for r in inbound), sum(r.bytes for r in outbound))
        raw[11] = _ratio(
            sum(r.packets for r in inbound), sum(r.packets for r in outbound)
        )
    raw[12] = sum(r.fragment_count for r in records) / window_seconds

    raw[13] = sum(1 for r in records if r.connection_failed) / len(records)
    raw[14] = sum(r.dns_query_count for r in records) / window_seconds
    raw[15] = sum(r.icmp_count for r in records) / window_seconds
    raw[16] = _category_entropy(r.http_method for r in records if r.http_method)
    return raw


@dataclass(frozen=True)
class NormalizerState:
    """Running per-dimension Welford statistics."""

    count: int
    mean: np.ndarray
    m2: np.ndarray
    frozen: bool = False
    variance_floor: float = VARIANCE_FLOOR

    @classmethod
    def empty(
        cls, dim: int = NUM_FEATURES, variance_floor: float = VARIANCE_FLOOR
    ) -> "NormalizerState":
        return cls(0, np.zeros(dim), np.zeros(dim), False, variance_floor)

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.ones_like(self.mean)
        return self.m2 / self.count

    def freeze(self) -> "NormalizerState":
        return NormalizerState(self.count, self.mean, self.m2, True, self.variance_floor)

    def scale(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.variance, self.variance_floor))


def normalize(
    raw: np.ndarray, state: NormalizerState, calibrating: bool
) -> Tuple[np.ndarray, NormalizerState]:
    """
    Z-score ``raw`` and, while calibrating, fold it into the statistics first.

    Variances are population variances floored at ``state.variance_floor``.
    A frozen state is never updated.
    """
    raw = np.asarray(raw, dtype=float)
    if calibrating and not state.frozen:
        count = state.count + 1
        delta = raw - state.mean
        mean = state.mean + delta / count
        m2 = state.m2 + delta * (raw - mean)
        state = NormalizerState(count, mean, m2, False, state.variance_floor)
    z = (raw - state.mean) / state.scale()
    return z, state


def featurize(
    records: Sequence[FlowRecord],
    window_seconds: float = 1.0,
    calibration_windows: int = 3600,
    stride: Optional[float] = None,
    state: Optional[NormalizerState] = None,
) -> Tuple[pd.DataFrame, NormalizerState]:
    """
    Records -> windows -> raw features -> normalised observation table.

    The first ``calibration_windows`` windows feed the normaliser (unless a
    frozen ``state`` is supplied); the state is frozen afterwards.

    Returns:
        (DataFrame with window_id, window_start and the 17 feature columns,
         final NormalizerState)
    """
    if calibration_windows < 0:
        raise ValueError("calibration_windows must be non-negative")
    windows = window_flows(records, window_seconds, stride)
    state = state or NormalizerState.empty()
    rows = []
    for window in windows:
        calibrating = window.window_id < calibration_windows and not state.frozen
        raw = extract_features(window.records, window_seconds)
        z, state = normalize(raw, state, calibrating)
        if window.window_id + 1 == calibration_windows:
            state = state.freeze()
        rows.append([window.window_id, window.start, *z])
    if not state.frozen and state.count > 0:
        log.warning(
            "only %d of %d calibration windows were available",
            state.count,
            calibration_windows,
        )
        state = state.freeze()
    frame = pd.DataFrame(rows, columns=["window_id", "window_start", *FEATURE_NAMES])
    log.info("featurized %d records into %d windows", len(records), len(frame))
    return frame, state


def observation_vectors(frame: pd.DataFrame) -> List[ObservationVector]:
    """Rows of a featurized table as ObservationVector records."""
    values = frame[list(FEATURE_NAMES)].to_numpy(dtype=float)
    return [
        ObservationVector(int(wid), float(start), values[i])
        for i, (wid, start) in enumerate(zip(frame["window_id"], frame["window_start"]))
    ]
