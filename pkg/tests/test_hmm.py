import itertools

import numpy as np
import pytest

from regime_ssm.core.hmm import forward_backward, predict_regime
from regime_ssm.core.model import KILLCHAIN_TRANSITIONS
from regime_ssm.errors import NumericalError


def enumerate_chain(log_lik, P, pi0):
    """Brute-force gamma, xi and evidence over every regime path."""
    T, K = log_lik.shape
    gamma = np.zeros((T, K))
    xi = np.zeros((T - 1, K, K))
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        w = pi0[path[0]] * np.exp(log_lik[0, path[0]])
        for t in range(1, T):
            w *= P[path[t - 1], path[t]] * np.exp(log_lik[t, path[t]])
        total += w
        for t in range(T):
            gamma[t, path[t]] += w
        for t in range(1, T):
            xi[t - 1, path[t - 1], path[t]] += w
    return gamma / total, xi / total, np.log(total)


class TestForwardBackward:
    """Scaled forward-backward over regime potentials."""

    def test_symmetric_chain_is_uniform(self):
        log_lik = np.full((8, 2), -1.3)
        posteriors = forward_backward(log_lik, np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        np.testing.assert_allclose(posteriors.gamma, 0.5)

    def test_absorbing_chain_keeps_initial_regime(self):
        rng = np.random.default_rng(0)
        log_lik = rng.normal(size=(10, 2))
        posteriors = forward_backward(log_lik, np.eye(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(posteriors.gamma[:, 0], 1.0)
        np.testing.assert_allclose(posteriors.gamma[:, 1], 0.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_path_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(2), size=2)
        pi0 = rng.dirichlet(np.ones(2))
        log_lik = rng.normal(scale=2.0, size=(6, 2))

        posteriors = forward_backward(log_lik, P, pi0)
        gamma, xi, log_evidence = enumerate_chain(log_lik, P, pi0)
        np.testing.assert_allclose(posteriors.gamma, gamma, atol=1e-12)
        np.testing.assert_allclose(posteriors.xi, xi, atol=1e-12)
        assert posteriors.log_evidence == pytest.approx(log_evidence, abs=1e-10)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        P = rng.dirichlet(np.ones(3), size=3)
        pi0 = np.ones(3) / 3
        log_lik = rng.normal(size=(7, 3))
        shift = rng.normal(scale=500.0, size=(7, 1))
        base = forward_backward(log_lik, P, pi0)
        shifted = forward_backward(log_lik + shift, P, pi0)
        np.testing.assert_allclose(shifted.gamma, base.gamma, atol=1e-12)
        assert shifted.log_evidence == pytest.approx(base.log_evidence + shift.sum())

    def test_extreme_potentials_stay_finite(self):
        log_lik = np.array([[0.0, -2000.0], [-2000.0, 0.0], [0.0, -2000.0]])
        posteriors = forward_backward(log_lik, np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        assert np.all(np.isfinite(posteriors.gamma))
        np.testing.assert_allclose(posteriors.gamma.argmax(axis=1), [0, 1, 0])

    def test_marginals_are_consistent(self):
        rng = np.random.default_rng(9)
        posteriors = forward_backward(
            rng.normal(size=(12, 4)), KILLCHAIN_TRANSITIONS, np.array([1.0, 0, 0, 0])
        )
        np.testing.assert_allclose(posteriors.gamma.sum(axis=1), 1.0)
        np.testing.assert_allclose(posteriors.xi.sum(axis=2), posteriors.gamma[:-1], atol=1e-12)
        np.testing.assert_allclose(posteriors.xi.sum(axis=1), posteriors.gamma[1:], atol=1e-12)

    def test_entropy_of_deterministic_chain_is_zero(self):
        posteriors = forward_backward(np.zeros((5, 2)), np.eye(2), np.array([1.0, 0.0]))
        assert posteriors.entropy() == pytest.approx(0.0, abs=1e-12)

    def test_entropy_of_independent_fair_coins(self):
        posteriors = forward_backward(np.zeros((4, 2)), np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        assert posteriors.entropy() == pytest.approx(4 * np.log(2))
        np.testing.assert_allclose(posteriors.entropy_prefix(), np.log(2) * np.arange(1, 5))

    def test_impossible_step_is_reported(self):
        log_lik = np.array([[0.0, 0.0], [-np.inf, -np.inf], [0.0, 0.0]])
        with pytest.raises(NumericalError) as excinfo:
            forward_backward(log_lik, np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        assert excinfo.value.time_index == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward_backward(np.zeros((3, 2)), np.eye(3), np.ones(3) / 3)


class TestPredictRegime:
    """k-step regime prediction."""

    def test_identity_transition(self):
        gamma = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(predict_regime(gamma, np.eye(4), 5), gamma)

    def test_normal_row_of_preset(self):
        predicted = predict_regime(np.array([1.0, 0, 0, 0]), KILLCHAIN_TRANSITIONS, 1)
        np.testing.assert_allclose(predicted, [0.92, 0.07, 0.01, 0.00])

    def test_semigroup(self):
        gamma = np.array([0.4, 0.3, 0.2, 0.1])
        two_then_three = predict_regime(predict_regime(gamma, KILLCHAIN_TRANSITIONS, 2), KILLCHAIN_TRANSITIONS, 3)
        np.testing.assert_allclose(two_then_three, predict_regime(gamma, KILLCHAIN_TRANSITIONS, 5))

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError):
            predict_regime(np.array([1.0, 0, 0, 0]), KILLCHAIN_TRANSITIONS, 0)
