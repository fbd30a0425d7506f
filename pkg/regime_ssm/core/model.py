"""
Switching linear-Gaussian model: parameter types, validation, sampling and the
kill-chain preset used by the detection harness.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ModelValidationError
from .rng import SeedLike, make_rng

log = logging.getLogger(__name__)

PSD_FLOOR = 1e-9
STOCHASTIC_TOL = 1e-9
STAGE_LABELS: Tuple[str, ...] = (
    "Normal",
    "Reconnaissance",
    "LateralMovement",
    "Exfiltration",
)

# Row-stochastic kill-chain prior: Normal, Recon, Intrusion, Exfiltration.
KILLCHAIN_TRANSITIONS = np.array(
    [
        [0.92, 0.07, 0.01, 0.00],
        [0.05, 0.78, 0.15, 0.02],
        [0.00, 0.03, 0.72, 0.25],
        [0.02, 0.00, 0.04, 0.94],
    ]
)


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return ``(M + M^T) / 2``."""
    matrix = np.asarray(matrix, dtype=float)
    return 0.5 * (matrix + matrix.T)


def floor_psd(matrix: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """
    Symmetrise ``matrix`` and raise any eigenvalue below ``floor`` to ``floor``.

    Matrices that already satisfy the floor come back symmetrised but otherwise
    untouched, so exact arithmetic downstream is preserved.
    """
    sym = symmetrize(matrix)
    if sym.size == 0:
        return sym
    try:
        # succeeds only when every eigenvalue already exceeds the floor
        np.linalg.cholesky(sym - floor * np.eye(sym.shape[0]))
        return sym
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[0] >= floor:
        return sym
    eigvals = np.maximum(eigvals, floor)
    return symmetrize((eigvecs * eigvals) @ eigvecs.T)


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L L^T = M`` for a symmetric PSD ``M`` (singular allowed)."""
    eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def spectral_radius(matrix: np.ndarray) -> float:
    """Largest absolute eigenvalue."""
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(matrix, dtype=float)))))


@dataclass(frozen=True)
class RegimeParams:
    """Linear-Gaussian parameters of one regime.

    Attributes:
        transition_A: n x n state transition
        observation_C: m x n observation matrix
        process_noise_Q: n x n process noise covariance (PSD)
        observation_noise_R: m x m observation noise covariance
    """

    transition_A: np.ndarray
    observation_C: np.ndarray
    process_noise_Q: np.ndarray
    observation_noise_R: np.ndarray

    def __post_init__(self):
        for name in (
            "transition_A",
            "observation_C",
            "process_noise_Q",
            "observation_noise_R",
        ):
            value = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if name in ("process_noise_Q", "observation_noise_R") and (
                value.shape[0] == value.shape[1]
            ):
                value = symmetrize(value)
            object.__setattr__(self, name, _frozen(value))

    @property
    def n(self) -> int:
        return self.transition_A.shape[0]

    @property
    def m(self) -> int:
        return self.observation_C.shape[0]


@dataclass(frozen=True)
class TransitionMatrix:
    """K x K row-stochastic regime transition matrix, ``P[i, j] = P(s_t=j | s_{t-1}=i)``."""

    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "probabilities", _frozen(np.atleast_2d(self.probabilities))
        )

    def __array__(self, dtype=None, copy=None):
        out = np.array(self.probabilities, dtype=dtype)
        return out

    @property
    def K(self) -> int:
        return self.probabilities.shape[0]

    @classmethod
    def normalized(cls, matrix) -> "TransitionMatrix":
        """Build from non-negative weights, renormalising each row."""
        matrix = np.asarray(matrix, dtype=float)
        if np.any(matrix < 0):
            raise ValueError("transition weights must be non-negative")
        sums = matrix.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("every transition row needs positive mass")
        return cls(matrix / sums)


@dataclass(frozen=True)
class SwitchingModel:
    """K regimes sharing latent dimension n and observation dimension m."""

    regimes: Tuple[RegimeParams, ...]
    transition: TransitionMatrix
    initial_regime_dist: np.ndarray
    initial_state_mean: np.ndarray
    initial_state_cov: np.ndarray
    control_input: Optional[np.ndarray] = None
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if not isinstance(self.transition, TransitionMatrix):
            object.__setattr__(self, "transition", TransitionMatrix(self.transition))
        object.__setattr__(
            self, "initial_regime_dist", _frozen(np.ravel(self.initial_regime_dist))
        )
        object.__setattr__(
            self, "initial_state_mean", _frozen(np.ravel(self.initial_state_mean))
        )
        object.__setattr__(
            self, "initial_state_cov", _frozen(np.atleast_2d(self.initial_state_cov))
        )
        if self.control_input is not None:
            object.__setattr__(self, "control_input", _frozen(self.control_input))
        if not self.labels:
            default = (
                STAGE_LABELS
                if len(self.regimes) == len(STAGE_LABELS)
                else tuple(f"regime_{k}" for k in range(len(self.regimes)))
            )
            object.__setattr__(self, "labels", default)
        else:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def K(self) -> int:
        return len(self.regimes)

    @property
    def n(self) -> int:
        return self.regimes[0].n

    @property
    def m(self) -> int:
        return self.regimes[0].m

    @property
    def pi(self) -> np.ndarray:
        return self.transition.probabilities

    def replace(self, **changes) -> "SwitchingModel":
        """Copy with fields replaced (dataclasses.replace)."""
        return dataclasses.replace(self, **changes)

    def with_noise(
        self,
        process_noise: Optional[Sequence[np.ndarray]] = None,
        observation_noise: Optional[Sequence[np.ndarray]] = None,
        transition: Optional[np.ndarray] = None,
    ) -> "SwitchingModel":
        """Copy with per-regime Q, R and/or the transition matrix swapped out."""
        regimes = []
        for s, regime in enumerate(self.regimes):
            regimes.append(
                RegimeParams(
                    regime.transition_A,
                    regime.observation_C,
                    regime.process_noise_Q
                    if process_noise is None
                    else process_noise[s],
                    regime.observation_noise_R
                    if observation_noise is None
                    else observation_noise[s],
                )
            )
        return self.replace(
            regimes=tuple(regimes),
            transition=self.transition
            if transition is None
            else TransitionMatrix(transition),
        )


class ViolationCode(Enum):
    DIMENSION_MISMATCH = "dimension_mismatch"
    NON_FINITE = "non_finite"
    NOT_PSD = "not_psd"
    NEGATIVE_PROBABILITY = "negative_probability"
    NON_STOCHASTIC_ROW = "non_stochastic_row"
    BAD_INITIAL_DISTRIBUTION = "bad_initial_distribution"
    BAD_LABELS = "bad_labels"
    BAD_CONFIG = "bad_config"


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    location: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.code.value}] {self.location}: {self.detail}"


@dataclass
class ValidationReport:
    """Collected violations; an empty report means the model is valid."""

    violations: List[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def add(self, code: ViolationCode, location: str, detail: str):
        self.violations.append(Violation(code, location, detail))

    def codes(self) -> List[ViolationCode]:
        return [v.code for v in self.violations]

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def _check_psd(report: ValidationReport, matrix: np.ndarray, location: str):
    eigvals = np.linalg.eigvalsh(symmetrize(matrix))
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals[0] < -1e-10 * scale:
        report.add(
            ViolationCode.NOT_PSD,
            location,
            f"smallest eigenvalue {eigvals[0]:.6g} is negative",
        )


def validate_model(model: SwitchingModel) -> ValidationReport:
    """
    Check every structural invariant of ``model``.

    Shapes must agree across regimes, every array must be finite, Q, R and
    Sigma0 must be PSD, the transition matrix must be row-stochastic and the
    initial regime distribution a probability vector. R need not be strictly
    positive definite here: the filters floor it at use.

    Returns:
        ValidationReport: empty iff the model is valid
    """
    report = ValidationReport()
    K = len(model.regimes)
    if K == 0:
        report.add(ViolationCode.DIMENSION_MISMATCH, "regimes", "no regimes")
        return report

    n = model.regimes[0].transition_A.shape[0]
    m = model.regimes[0].observation_C.shape[0]
    expected = {
        "transition_A": (n, n),
        "observation_C": (m, n),
        "process_noise_Q": (n, n),
        "observation_noise_R": (m, m),
    }
    shapes_ok = True
    for s, regime in enumerate(model.regimes):
        for name, shape in expected.items():
            value = getattr(regime, name)
            location = f"regimes[{s}].{name}"
            if value.shape != shape:
                report.add(
                    ViolationCode.DIMENSION_MISMATCH,
                    location,
                    f"shape {value.shape}, expected {shape}",
                )
                shapes_ok = False
            elif not np.all(np.isfinite(value)):
                report.add(ViolationCode.NON_FINITE, location, "non-finite entries")
                shapes_ok = False
        if shapes_ok:
            _check_psd(report, regime.process_noise_Q, f"regimes[{s}].process_noise_Q")
            _check_psd(
                report, regime.observation_noise_R, f"regimes[{s}].observation_noise_R"
            )

    P = model.transition.probabilities
    if P.shape != (K, K):
        report.add(
            ViolationCode.DIMENSION_MISMATCH,
            "transition",
            f"shape {P.shape}, expected {(K, K)}",
        )
    elif not np.all(np.isfinite(P)):
        report.add(ViolationCode.NON_FINITE, "transition", "non-finite entries")
    else:
        for i in range(K):
            if np.any(P[i] < 0):
                report.add(
                    ViolationCode.NEGATIVE_PROBABILITY,
                    f"transition[{i}]",
                    "negative entries",
                )
            total = float(P[i].sum())
            if abs(total - 1.0) > STOCHASTIC_TOL:
                report.add(
                    ViolationCode.NON_STOCHASTIC_ROW,
                    f"transition[{i}]",
                    f"row sums to {total:.12g}",
                )

    pi0 = model.initial_regime_dist
    if pi0.shape != (K,):
        report.add(
            ViolationCode.DIMENSION_MISMATCH,
            "initial_regime_dist",
            f"length {pi0.size}, expected {K}",
        )
    elif (
        not np.all(np.isfinite(pi0))
        or np.any(pi0 < 0)
        or abs(float(pi0.sum()) - 1.0) > STOCHASTIC_TOL
    ):
        report.add(
            ViolationCode.BAD_INITIAL_DISTRIBUTION,
            "initial_regime_dist",
            "not a probability vector",
        )

    if model.initial_state_mean.shape != (n,):
        report.add(
            ViolationCode.DIMENSION_MISMATCH,
            "initial_state_mean",
            f"length {model.initial_state_mean.size}, expected {n}",
        )
    if model.initial_state_cov.shape != (n, n):
        report.add(
            ViolationCode.DIMENSION_MISMATCH,
            "initial_state_cov",
            f"shape {model.initial_state_cov.shape}, expected {(n, n)}",
        )
    elif not np.all(np.isfinite(model.initial_state_cov)):
        report.add(ViolationCode.NON_FINITE, "initial_state_cov", "non-finite entries")
    else:
        _check_psd(report, model.initial_state_cov, "initial_state_cov")

    if model.control_input is not None and model.control_input.shape[-1] != n:
        report.add(
            ViolationCode.DIMENSION_MISMATCH,
            "control_input",
            f"last axis {model.control_input.shape[-1]}, expected {n}",
        )
    if len(model.labels) != K:
        report.add(ViolationCode.BAD_LABELS, "labels", f"{len(model.labels)} for {K}")

    if report.violations:
        log.debug("validation found %d violation(s)", len(report.violations))
    return report


def ensure_valid(model: SwitchingModel):
    """Raise :class:`ModelValidationError` unless ``model`` validates."""
    report = validate_model(model)
    if not report.is_valid:
        raise ModelValidationError(report)


def resolve_controls(
    model: SwitchingModel, controls: Optional[np.ndarray], T: int
) -> np.ndarray:
    """Per-step control inputs as a T x n array (zeros when absent)."""
    if controls is None:
        if model.control_input is None:
            return np.zeros((T, model.n))
        controls = model.control_input
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = np.broadcast_to(controls, (T, model.n))
    if controls.shape != (T, model.n):
        raise ValueError(f"controls must have shape {(T, model.n)}, got {controls.shape}")
    return controls


@dataclass(frozen=True)
class SampledTrajectory:
    regimes: np.ndarray
    latents: np.ndarray
    observations: np.ndarray


def draw_regime_path(
    transition: np.ndarray, initial: np.ndarray, uniforms: np.ndarray
) -> np.ndarray:
    """Map uniforms to a Markov chain path by inverse-CDF sampling."""
    K = len(initial)
    cum_initial = np.cumsum(initial)
    cum_rows = np.cumsum(transition, axis=1)
    path = np.empty(len(uniforms), dtype=int)
    state = min(int(np.searchsorted(cum_initial, uniforms[0], side="right")), K - 1)
    path[0] = state
    for t in range(1, len(uniforms)):
        state = min(
            int(np.searchsorted(cum_rows[state], uniforms[t], side="right")), K - 1
        )
        path[t] = state
    return path


def simulate_continuous(
    model: SwitchingModel,
    regimes: np.ndarray,
    rng: np.random.Generator,
    controls: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw latents and observations along a fixed regime path."""
    T = len(regimes)
    n, m = model.n, model.m
    U = resolve_controls(model, controls, T)
    init_factor = psd_factor(model.initial_state_cov)
    q_factors = [psd_factor(r.process_noise_Q) for r in model.regimes]
    r_factors = [psd_factor(r.observation_noise_R) for r in model.regimes]

    z0 = rng.standard_normal(n)
    W = rng.standard_normal((T, n))
    V = rng.standard_normal((T, m))

    latents = np.empty((T, n))
    observations = np.empty((T, m))
    x = model.initial_state_mean + init_factor @ z0
    for t in range(T):
        regime = model.regimes[regimes[t]]
        s = regimes[t]
        if t > 0:
            x = regime.transition_A @ x + U[t] + q_factors[s] @ W[t]
        latents[t] = x
        observations[t] = regime.observation_C @ x + r_factors[s] @ V[t]
    return latents, observations


def sample_trajectory(
    model: SwitchingModel,
    T: int,
    seed: SeedLike = None,
    controls: Optional[np.ndarray] = None,
) -> SampledTrajectory:
    """
    Draw ``(s_{1:T}, x_{1:T}, y_{1:T})`` from the generative model.

    Args:
        model: validated switching model
        T: number of steps (>= 1)
        seed: RNG seed; identical seeds give bit-identical output

    Returns:
        SampledTrajectory with regimes (T,), latents (T, n), observations (T, m)

    Raises:
        ValueError: if T < 1
        ModelValidationError: if the model is invalid
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    ensure_valid(model)
    rng = make_rng(seed)
    regimes = draw_regime_path(model.pi, model.initial_regime_dist, rng.random(T))
    latents, observations = simulate_continuous(model, regimes, rng, controls)
    return SampledTrajectory(regimes, latents, observations)


def _observation_groups(m: int) -> List[np.ndarray]:
    if m == 17:
        # timing, port diversity, payload/volume, stateful
        return [np.arange(0, 4), np.arange(4, 8), np.arange(8, 13), np.arange(13, 17)]
    return np.array_split(np.arange(m), 4)


def default_killchain_model(
    K: int = 4,
    n: int = 8,
    m: int = 17,
    decay: float = 0.85,
    process_noise: float = 0.1,
    observation_noise: float = 0.1,
    elevation: float = 10.0,
    exfil_growth: float = 1.05,
    initial_regime_dist: Optional[np.ndarray] = None,
) -> SwitchingModel:
    """
    Four-regime kill-chain preset.

    Latents are split into four blocks (timing, port diversity, payload/volume,
    stateful) and each observation group loads on its own block. Normal is
    stable; Reconnaissance and Lateral Movement raise process noise by
    ``elevation`` on the port-diversity and stateful blocks; Exfiltration has one
    growing mode on the volume latent.

    Args:
        K: number of regimes, must be 4
        n: latent dimension (>= 4)
        m: observation dimension (>= 4); 17 maps onto the flow feature groups
        initial_regime_dist: defaults to starting in Normal

    Returns:
        SwitchingModel: validated preset
    """
    if K != 4:
        raise ValueError(f"kill-chain preset has exactly 4 regimes, got K={K}")
    if n < 4 or m < 4:
        raise ValueError("kill-chain preset needs n >= 4 and m >= 4")
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1) for a stable Normal regime")

    blocks = np.array_split(np.arange(n), 4)
    C = np.zeros((m, n))
    for group, latent_block in zip(_observation_groups(m), blocks):
        for i, obs in enumerate(group):
            C[obs, latent_block[i % len(latent_block)]] = 1.0

    A_normal = decay * np.eye(n)
    A_exfil = A_normal.copy()
    A_exfil[blocks[2][0], blocks[2][0]] = exfil_growth

    Q_base = process_noise * np.eye(n)
    Q_recon = Q_base.copy()
    Q_recon[blocks[1], blocks[1]] *= elevation
    Q_lateral = Q_base.copy()
    Q_lateral[blocks[3], blocks[3]] *= elevation
    R = observation_noise * np.eye(m)

    regimes = (
        RegimeParams(A_normal, C, Q_base, R),
        RegimeParams(A_normal, C, Q_recon, R),
        RegimeParams(A_normal, C, Q_lateral, R),
        RegimeParams(A_exfil, C, Q_base, R),
    )
    if initial_regime_dist is None:
        initial_regime_dist = np.array([1.0, 0.0, 0.0, 0.0])
    model = SwitchingModel(
        regimes=regimes,
        transition=TransitionMatrix.normalized(KILLCHAIN_TRANSITIONS),
        initial_regime_dist=initial_regime_dist,
        initial_state_mean=np.zeros(n),
        initial_state_cov=np.eye(n),
        labels=STAGE_LABELS,
    )
    ensure_valid(model)
    log.debug(
        "built kill-chain preset n=%d m=%d rho(A_exfil)=%.3f",
        n,
        m,
        spectral_radius(A_exfil),
    )
    return model
