"""
Regime SSM - switching state-space detection of multi-stage network intrusions.

This package provides a switching linear dynamical system over kill-chain
stages, variational inference of regime and state posteriors, online
parameter adaptation, KL-gated alerting, and an evaluation harness with exact
brute-force oracles for small instances.
"""

__version__ = "1.0.0"
__author__ = "Regime SSM Team"

# Core imports
from .core.model import (
    RegimeParams,
    SwitchingModel,
    TransitionMatrix,
    default_killchain_model,
    sample_trajectory,
    validate_model,
)
from .core.kalman import rts_smooth, run_filter
from .core.hmm import forward_backward, predict_regime
from .core.feov import extract_features, featurize, window_flows

# Analysis imports
from .analysis.vsipc import elbo, infer
from .analysis.onlineem import OnlineEmUpdater
from .analysis.alerting import build_alert, kl_gate
from .analysis.oracle import enumerate_exact
from .analysis.harness import generate_scenario, run_ablation, run_detection
from .analysis.evaluation import evaluate

# Configuration
from .utils.config import RunConfig, load_config

__all__ = [
    "RegimeParams",
    "SwitchingModel",
    "TransitionMatrix",
    "default_killchain_model",
    "sample_trajectory",
    "validate_model",
    "run_filter",
    "rts_smooth",
    "forward_backward",
    "predict_regime",
    "window_flows",
    "extract_features",
    "featurize",
    "infer",
    "elbo",
    "OnlineEmUpdater",
    "kl_gate",
    "build_alert",
    "enumerate_exact",
    "generate_scenario",
    "run_detection",
    "run_ablation",
    "evaluate",
    "RunConfig",
    "load_config",
]
