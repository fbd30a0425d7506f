"""
Run configuration: one frozen dataclass per component plus a JSON loader that
covers all of them.

Example file::

    {
        "inference": {"k_max": 15, "tolerance_epsilon": 1e-4},
        "online_em": {"eta": 0.01},
        "gate": {"calibration_percentile": 99.5},
        "features": {"window_seconds": 1.0, "calibration_windows": 3600},
        "detection": {"batch_size": 60, "variant": "full"}
    }
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from ..core.model import ValidationReport, ViolationCode
from ..errors import ModelValidationError

log = logging.getLogger(__name__)


class GammaInit(Enum):
    """How regime marginals are initialised before the first continuous step."""

    PRIOR = "prior"
    UNIFORM = "uniform"


class ContinuousUpdate(Enum):
    """Form of the Gaussian half of the coordinate ascent."""

    # exact optimum of the bound given q(s): information-weighted transitions
    EXACT = "exact"
    # moment-matched A_eff / Q_eff with the previous smoothed covariance
    EFFECTIVE_PARAMS = "effective_params"


class DiscreteUpdate(Enum):
    """Per-step regime potentials fed to forward-backward after iteration 1."""

    # expected complete-data log-likelihood under q(x)
    EXPECTED_LOGLIK = "expected_loglik"
    # Gaussian density of smoothed innovations, N(y; C x_hat, C P C^T + R)
    SMOOTHED_INNOVATION = "smoothed_innovation"


class ProcessNoiseUpdate(Enum):
    AS_PRINTED = "as_printed"
    CLASSICAL = "classical"


class EmCadence(Enum):
    WINDOW_FINAL = "window_final"
    EVERY_STEP = "every_step"


class DetectionVariant(Enum):
    FULL = "full"
    NO_KL_GATE = "no_kl_gate"
    STATIC = "static"
    SINGLE_REGIME = "single_regime"


@dataclass(frozen=True)
class InferenceConfig:
    tolerance_epsilon: float = 1e-4
    k_max: int = 15
    division_floor: float = 1e-6
    gamma_init: GammaInit = GammaInit.PRIOR
    continuous_update: ContinuousUpdate = ContinuousUpdate.EXACT
    discrete_update: DiscreteUpdate = DiscreteUpdate.EXPECTED_LOGLIK
    bank_workers: Optional[int] = None

    def __post_init__(self):
        if self.tolerance_epsilon <= 0:
            raise ValueError("tolerance_epsilon must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.division_floor <= 0:
            raise ValueError("division_floor must be positive")


@dataclass(frozen=True)
class OnlineEmConfig:
    eta: float = 0.01
    division_floor: float = 1e-6
    process_noise_update: ProcessNoiseUpdate = ProcessNoiseUpdate.AS_PRINTED
    cadence: EmCadence = EmCadence.WINDOW_FINAL
    # tail length for the Polyak average of the transition matrix
    average_window: int = 5000
    allow_zero_eta: bool = False

    def __post_init__(self):
        lower_ok = self.eta >= 0 if self.allow_zero_eta else self.eta > 0
        if not (lower_ok and self.eta < 1):
            raise ValueError("eta must lie in (0, 1)")
        if self.division_floor <= 0:
            raise ValueError("division_floor must be positive")
        if self.average_window < 1:
            raise ValueError("average_window must be at least 1")


@dataclass(frozen=True)
class GateConfig:
    """KL gate settings. ``tau_kl=None`` means calibrate from the stream."""

    tau_kl: Optional[float] = None
    calibration_percentile: float = 99.5
    tau_floor: float = 0.5

    def __post_init__(self):
        if self.tau_kl is not None and self.tau_kl <= 0:
            raise ValueError("tau_kl must be positive")
        if not 0 < self.calibration_percentile <= 100:
            raise ValueError("calibration_percentile must lie in (0, 100]")
        if self.tau_floor < 0:
            raise ValueError("tau_floor must be non-negative")


@dataclass(frozen=True)
class FeatureConfig:
    window_seconds: float = 1.0
    stride: Optional[float] = None
    calibration_windows: int = 3600
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.stride is not None and self.stride <= 0:
            raise ValueError("stride must be positive")
        if self.calibration_windows < 0:
            raise ValueError("calibration_windows must be non-negative")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")


@dataclass(frozen=True)
class DetectionConfig:
    batch_size: int = 60
    variant: DetectionVariant = DetectionVariant.FULL
    calibration_windows: int = 3600
    window_seconds: float = 1.0
    # None -> uniform over regimes
    initial_regime_dist: Optional[Tuple[float, ...]] = None
    baseline_level: float = 0.999
    snapshot_every: Optional[int] = None
    label_map: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.calibration_windows < 0:
            raise ValueError("calibration_windows must be non-negative")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if not 0 < self.baseline_level < 1:
            raise ValueError("baseline_level must lie in (0, 1)")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    online_em: OnlineEmConfig = field(default_factory=OnlineEmConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)


_SECTIONS = {
    "inference": InferenceConfig,
    "online_em": OnlineEmConfig,
    "gate": GateConfig,
    "features": FeatureConfig,
    "detection": DetectionConfig,
}


def _coerce(cls, key: str, value: Any, report: ValidationReport, section: str):
    field_type = {f.name: f.type for f in dataclasses.fields(cls)}[key]
    enum_type = field_type if isinstance(field_type, type) and issubclass(field_type, Enum) else None
    if enum_type is not None:
        try:
            return enum_type(value)
        except ValueError:
            allowed = [e.value for e in enum_type]
            report.add(
                ViolationCode.BAD_CONFIG,
                f"{section}.{key}",
                f"{value!r} not one of {allowed}",
            )
            return None
    if key == "initial_regime_dist" and value is not None:
        return tuple(float(v) for v in value)
    return value


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig from a plain dict.

    Raises:
        ModelValidationError: on unknown sections/keys or bad values
    """
    report = ValidationReport()
    sections: Dict[str, Any] = {}
    for section, values in data.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            report.add(ViolationCode.BAD_CONFIG, section, "unknown section")
            continue
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in (values or {}).items():
            if key not in known:
                report.add(ViolationCode.BAD_CONFIG, f"{section}.{key}", "unknown key")
                continue
            kwargs[key] = _coerce(cls, key, value, report, section)
        if report.violations:
            continue
        try:
            sections[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            report.add(ViolationCode.BAD_CONFIG, section, str(exc))
    if report.violations:
        raise ModelValidationError(report)
    return RunConfig(**sections)


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for section in _SECTIONS:
        values = {}
        for f in dataclasses.fields(getattr(config, section)):
            value = getattr(getattr(config, section), f.name)
            values[f.name] = value.value if isinstance(value, Enum) else value
        out[section] = values
    return out


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Load a JSON run config; ``None`` returns the defaults."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    config = config_from_dict(data)
    log.info("loaded config from %s", path)
    return config
