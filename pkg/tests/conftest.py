import os

import numpy as np
import pytest

from regime_ssm.core.model import (
    RegimeParams,
    SwitchingModel,
    TransitionMatrix,
    default_killchain_model,
)

# Set environment variable to hide plots during testing
os.environ["HIDE_PLOTS"] = "1"


def scalar_regime(A=1.0, C=1.0, Q=1.0, R=1.0):
    return RegimeParams([[A]], [[C]], [[Q]], [[R]])


def two_regime_scalar_model(
    A=(0.9, 0.9),
    Q=(0.2, 0.2),
    R=(0.2, 2.0),
    transition=((0.8, 0.2), (0.3, 0.7)),
    initial=(0.5, 0.5),
):
    """K=2, n=m=1 model whose regimes differ only where asked."""
    return SwitchingModel(
        regimes=tuple(scalar_regime(a, 1.0, q, r) for a, q, r in zip(A, Q, R)),
        transition=TransitionMatrix(np.array(transition)),
        initial_regime_dist=np.array(initial),
        initial_state_mean=np.zeros(1),
        initial_state_cov=np.eye(1),
    )


def random_lds(rng, n=2, m=3):
    """Stable random single-regime parameters."""
    A = rng.normal(size=(n, n))
    A *= 0.8 / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    C = rng.normal(size=(m, n))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    M = rng.normal(size=(m, m))
    R = M @ M.T + 0.2 * np.eye(m)
    return RegimeParams(A, C, Q, R)


def random_switching_model(rng, K=4, n=2, m=2):
    """Random stable regimes with a persistent random transition matrix."""
    transition = 0.5 * np.eye(K) + 0.5 * rng.dirichlet(np.ones(K), size=K)
    return SwitchingModel(
        regimes=tuple(random_lds(rng, n=n, m=m) for _ in range(K)),
        transition=TransitionMatrix(transition),
        initial_regime_dist=rng.dirichlet(np.ones(K)),
        initial_state_mean=rng.normal(size=n),
        initial_state_cov=np.eye(n),
    )


@pytest.fixture
def scalar_params():
    """A = C = Q = R = 1."""
    return scalar_regime()


@pytest.fixture
def two_regime_model():
    return two_regime_scalar_model()


@pytest.fixture(scope="session")
def killchain_model():
    return default_killchain_model()


@pytest.fixture
def small_killchain_model():
    """The preset at n=4, m=4 for fast pipeline tests."""
    return default_killchain_model(n=4, m=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
