import numpy as np
import pytest

from regime_ssm.analysis.oracle import dense_lds_posterior
from regime_ssm.core.kalman import (
    GaussianState,
    filter_step,
    predict,
    robust_cholesky,
    rts_smooth,
    run_filter,
    run_filter_bank,
)
from regime_ssm.core.model import RegimeParams, sample_trajectory
from regime_ssm.errors import NumericalError
from tests.conftest import random_lds, scalar_regime, two_regime_scalar_model


class TestFilterStep:
    """Single predict/update cycles."""

    def test_scalar_example(self, scalar_params):
        prior = GaussianState(np.zeros(1), np.eye(1))
        result = filter_step(prior, np.array([2.0]), None, scalar_params)

        assert result.predicted.mean[0] == pytest.approx(0.0)
        assert result.predicted.covariance[0, 0] == pytest.approx(2.0)
        assert result.innovation_cov[0, 0] == pytest.approx(3.0)
        assert result.gain[0, 0] == pytest.approx(2.0 / 3.0)
        assert result.updated.mean[0] == pytest.approx(4.0 / 3.0)
        assert result.updated.covariance[0, 0] == pytest.approx(2.0 / 3.0)
        expected = -0.5 * (np.log(2 * np.pi) + np.log(3.0) + 4.0 / 3.0)
        assert result.log_likelihood == pytest.approx(expected)
        assert result.mahalanobis == pytest.approx(4.0 / 3.0)

    def test_perfect_observation_fixpoint(self):
        params = RegimeParams(np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
        y = np.array([1.5, -0.5])
        prior = GaussianState(y.copy(), np.eye(2))
        result = filter_step(prior, y, np.zeros(2), params)
        np.testing.assert_allclose(result.innovation, 0.0)
        np.testing.assert_allclose(result.updated.mean, y)

    def test_without_predict_uses_prior_directly(self, scalar_params):
        prior = GaussianState(np.zeros(1), np.eye(1))
        result = filter_step(prior, np.array([2.0]), None, scalar_params, predict_first=False)
        assert result.predicted is prior
        assert result.updated.mean[0] == pytest.approx(1.0)

    def test_control_shifts_prediction(self, scalar_params):
        state = predict(GaussianState(np.zeros(1), np.eye(1)), np.eye(1), np.eye(1), np.array([3.0]))
        assert state.mean[0] == pytest.approx(3.0)

    def test_updated_covariance_is_symmetric(self, rng):
        params = random_lds(rng, n=3, m=2)
        prior = GaussianState(rng.normal(size=3), np.eye(3))
        P = filter_step(prior, rng.normal(size=2), None, params).updated.covariance
        np.testing.assert_array_equal(P, P.T)
        assert np.all(np.linalg.eigvalsh(P) > 0)


class TestRobustCholesky:
    """Cholesky with a single jitter retry."""

    def test_singular_matrix_gets_jitter(self):
        _, used = robust_cholesky(np.zeros((2, 2)))
        np.testing.assert_allclose(used, 1e-9 * np.eye(2))

    def test_indefinite_matrix_fails_with_time_index(self):
        with pytest.raises(NumericalError) as excinfo:
            robust_cholesky(np.diag([1.0, -1.0]), "innovation covariance", 7)
        assert excinfo.value.time_index == 7


class TestRunFilterAndSmoother:
    """Whole-sequence filtering and RTS smoothing."""

    def test_single_step_smoothing_is_filtering(self, scalar_params):
        output = run_filter(np.array([[2.0]]), scalar_params, np.zeros(1), np.eye(1))
        smoothed = rts_smooth(output.pairs(), np.eye(1))
        np.testing.assert_array_equal(smoothed.means[0], output.steps[0].updated.mean)
        np.testing.assert_array_equal(
            smoothed.covariances[0], output.steps[0].updated.covariance
        )

    def test_static_latent(self):
        params = RegimeParams([[1.0]], [[1.0]], [[0.0]], [[0.5]])
        Y = np.full((6, 1), 2.0)
        output = run_filter(Y, params, np.zeros(1), np.eye(1))
        smoothed = rts_smooth(output.pairs(), params.transition_A)
        np.testing.assert_allclose(smoothed.means, smoothed.means[0], atol=1e-6)
        filtered_vars = [step.updated.covariance[0, 0] for step in output.steps]
        assert all(a >= b - 1e-12 for a, b in zip(filtered_vars[:-1], filtered_vars[1:]))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_conditioning(self, seed):
        rng = np.random.default_rng(seed)
        params = RegimeParams(
            [[rng.uniform(-1.2, 1.2)]],
            [[rng.uniform(0.5, 2.0)]],
            [[rng.uniform(0.1, 1.0)]],
            [[rng.uniform(0.1, 1.0)]],
        )
        Y = rng.normal(size=(5, 1))
        output = run_filter(Y, params, np.zeros(1), np.eye(1))
        smoothed = rts_smooth(output.pairs(), params.transition_A)
        dense = dense_lds_posterior(Y, [params] * 5, np.zeros(1), np.eye(1))

        np.testing.assert_allclose(smoothed.means, dense.means, atol=1e-9)
        np.testing.assert_allclose(smoothed.covariances, dense.covariances, atol=1e-9)
        assert output.log_evidence == pytest.approx(dense.log_evidence, abs=1e-9)
        for t in range(1, 5):
            np.testing.assert_allclose(
                smoothed.lag_one_cov[t], dense.cross_cov(t, t - 1), atol=1e-9
            )

    @pytest.mark.parametrize("seed", range(100))
    def test_random_instances_match_dense_conditioning(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n, m = rng.integers(1, 4, size=2)
        T = int(rng.integers(2, 9))
        params = random_lds(rng, n=int(n), m=int(m))
        Y = rng.normal(size=(T, m))
        mu0 = rng.normal(size=n)
        output = run_filter(Y, params, mu0, np.eye(n))
        smoothed = rts_smooth(output.pairs(), params.transition_A)
        dense = dense_lds_posterior(Y, [params] * T, mu0, np.eye(n))

        np.testing.assert_allclose(smoothed.means, dense.means, atol=1e-8)
        np.testing.assert_allclose(smoothed.covariances, dense.covariances, atol=1e-8)
        assert output.log_evidence == pytest.approx(dense.log_evidence, abs=1e-8)

    def test_multivariate_matches_dense_conditioning(self, rng):
        params = random_lds(rng, n=2, m=3)
        Y = rng.normal(size=(4, 3))
        output = run_filter(Y, params, np.zeros(2), np.eye(2))
        smoothed = rts_smooth(output.pairs(), params.transition_A)
        dense = dense_lds_posterior(Y, [params] * 4, np.zeros(2), np.eye(2))
        np.testing.assert_allclose(smoothed.means, dense.means, atol=1e-8)
        np.testing.assert_allclose(smoothed.covariances, dense.covariances, atol=1e-8)

    def test_smoothed_variance_never_exceeds_filtered(self, killchain_model):
        trajectory = sample_trajectory(killchain_model, 40, seed=5)
        params = killchain_model.regimes[0]
        output = run_filter(
            trajectory.observations,
            params,
            killchain_model.initial_state_mean,
            killchain_model.initial_state_cov,
        )
        smoothed = rts_smooth(output.pairs(), params.transition_A)
        for t, step in enumerate(output.steps):
            assert np.trace(smoothed.covariances[t]) <= np.trace(step.updated.covariance) + 1e-9

    def test_params_length_must_match(self, scalar_params):
        with pytest.raises(ValueError):
            run_filter(np.zeros((3, 1)), [scalar_params] * 2, np.zeros(1), np.eye(1))


class TestFilterBank:
    """K filters from a shared prior."""

    def test_identical_regimes_give_identical_results(self):
        model = two_regime_scalar_model(R=(0.5, 0.5))
        prior = GaussianState(np.zeros(1), np.eye(1))
        first, second = run_filter_bank(prior, np.array([0.7]), np.zeros(1), model)
        assert first.log_likelihood == second.log_likelihood
        np.testing.assert_array_equal(first.updated.mean, second.updated.mean)

    def test_tighter_noise_wins_at_zero_innovation(self):
        model = two_regime_scalar_model(R=(0.1, 10.0))
        prior = GaussianState(np.zeros(1), np.eye(1))
        tight, loose = run_filter_bank(prior, np.zeros(1), np.zeros(1), model)
        assert tight.log_likelihood > loose.log_likelihood

    def test_thread_pool_matches_sequential(self, killchain_model):
        prior = GaussianState(np.zeros(8), np.eye(8))
        y = np.linspace(-1.0, 1.0, 17)
        sequential = run_filter_bank(prior, y, np.zeros(8), killchain_model)
        threaded = run_filter_bank(prior, y, np.zeros(8), killchain_model, max_workers=4)
        assert [r.log_likelihood for r in sequential] == [r.log_likelihood for r in threaded]

    def test_exfiltration_regime_explains_its_own_growth(self, killchain_model):
        exfil = killchain_model.regimes[3]
        n = killchain_model.n
        hits = 0
        rng = np.random.default_rng(11)
        for _ in range(200):
            x_prev = rng.normal(size=n) + 40.0 * np.eye(n)[4]
            prior = GaussianState(x_prev, 1e-4 * np.eye(n))
            x = exfil.transition_A @ x_prev + rng.multivariate_normal(
                np.zeros(n), exfil.process_noise_Q
            )
            y = exfil.observation_C @ x + rng.multivariate_normal(
                np.zeros(killchain_model.m), exfil.observation_noise_R
            )
            results = run_filter_bank(prior, y, np.zeros(n), killchain_model)
            if int(np.argmax([r.log_likelihood for r in results])) == 3:
                hits += 1
        assert hits >= 180
