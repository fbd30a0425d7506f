import numpy as np
import pytest
from scipy.linalg import block_diag

from regime_ssm.analysis.oracle import enumerate_exact
from regime_ssm.analysis.vsipc import (
    _information_update,
    effective_params,
    elbo,
    infer,
    measure_iteration_scaling,
)
from regime_ssm.core.kalman import GaussianState, rts_smooth, run_filter, update
from regime_ssm.core.model import SwitchingModel, TransitionMatrix, sample_trajectory
from regime_ssm.errors import ModelValidationError
from regime_ssm.utils.config import ContinuousUpdate, DiscreteUpdate, GammaInit, InferenceConfig
from tests.conftest import (
    random_lds,
    random_switching_model,
    scalar_regime,
    two_regime_scalar_model,
)


def single_regime_model(params):
    return SwitchingModel(
        regimes=(params,),
        transition=TransitionMatrix(np.eye(1)),
        initial_regime_dist=np.ones(1),
        initial_state_mean=np.zeros(params.n),
        initial_state_cov=np.eye(params.n),
    )


class TestEffectiveParams:
    """Moment-matched single-regime dynamics."""

    def test_one_hot_recovers_regime(self, killchain_model):
        gamma = np.array([0.0, 0.0, 0.0, 1.0])
        A_eff, Q_eff = effective_params(gamma, killchain_model.regimes, np.eye(8))
        np.testing.assert_allclose(A_eff, killchain_model.regimes[3].transition_A)
        np.testing.assert_allclose(Q_eff, killchain_model.regimes[3].process_noise_Q)

    def test_identical_dynamics_have_no_spread(self):
        regimes = [scalar_regime(A=0.5, Q=1.0), scalar_regime(A=0.5, Q=3.0)]
        A_eff, Q_eff = effective_params(np.array([0.25, 0.75]), regimes, np.eye(1) * 7.0)
        assert A_eff[0, 0] == pytest.approx(0.5)
        assert Q_eff[0, 0] == pytest.approx(0.25 * 1.0 + 0.75 * 3.0)

    def test_scalar_example(self):
        regimes = [scalar_regime(A=0.0, Q=1.0), scalar_regime(A=2.0, Q=1.0)]
        A_eff, Q_eff = effective_params(np.array([0.5, 0.5]), regimes, np.eye(1))
        assert A_eff[0, 0] == pytest.approx(1.0)
        assert Q_eff[0, 0] == pytest.approx(2.0)

    def test_gamma_length_must_match(self, killchain_model):
        with pytest.raises(ValueError):
            effective_params(np.ones(3) / 3, killchain_model.regimes, np.eye(8))


class TestInformationUpdate:
    """Regime-weighted observation updates in information form."""

    def test_matches_stacked_observation_update(self, rng):
        regimes = [random_lds(rng, n=3, m=2) for _ in range(3)]
        gamma = np.array([0.2, 0.5, 0.3])
        y = rng.normal(size=2)
        B = rng.normal(size=(3, 3))
        predicted = GaussianState(rng.normal(size=3), B @ B.T + np.eye(3))

        precision = np.zeros((3, 3))
        shift = np.zeros(3)
        for g, r in zip(gamma, regimes):
            C, R = r.observation_C, r.observation_noise_R
            precision += g * C.T @ np.linalg.solve(R, C)
            shift += g * C.T @ np.linalg.solve(R, y)
        informed = _information_update(predicted, precision, shift, 0)

        stacked = update(
            predicted,
            np.tile(y, 3),
            np.vstack([r.observation_C for r in regimes]),
            block_diag(*[r.observation_noise_R / g for g, r in zip(gamma, regimes)]),
        ).updated
        np.testing.assert_allclose(informed.mean, stacked.mean, atol=1e-10)
        np.testing.assert_allclose(informed.covariance, stacked.covariance, atol=1e-10)

    def test_zero_precision_leaves_prior(self, rng):
        predicted = GaussianState(rng.normal(size=2), np.diag([2.0, 0.5]))
        out = _information_update(predicted, np.zeros((2, 2)), np.zeros(2), 0)
        np.testing.assert_allclose(out.mean, predicted.mean)
        np.testing.assert_allclose(out.covariance, predicted.covariance)


class TestSingleRegime:
    """With one regime inference reduces to Kalman filtering and smoothing."""

    def test_matches_filter_and_smoother(self, rng):
        params = random_lds(rng, n=2, m=3)
        model = single_regime_model(params)
        Y = sample_trajectory(model, 30, seed=2).observations

        result = infer(model, Y)
        output = run_filter(Y, params, np.zeros(2), np.eye(2))
        smoothed = rts_smooth(output.pairs(), params.transition_A)

        assert result.converged
        assert result.iterations <= 2
        np.testing.assert_array_equal(result.posteriors.gamma, 1.0)
        np.testing.assert_allclose(result.smoothed.means, smoothed.means, atol=1e-10)
        np.testing.assert_allclose(result.smoothed.covariances, smoothed.covariances, atol=1e-10)
        assert result.elbo == pytest.approx(output.log_evidence, abs=1e-6)


class TestInfer:
    """Coordinate-ascent inference over one batch."""

    def test_bound_never_decreases(self, small_killchain_model):
        Y = sample_trajectory(small_killchain_model, 80, seed=4).observations
        result = infer(small_killchain_model, Y, config=InferenceConfig(k_max=10, tolerance_epsilon=1e-8))
        trace = np.array(result.elbo_trace)
        assert np.all(np.diff(trace) >= -1e-6)

    def test_bound_never_decreases_two_regimes(self, two_regime_model):
        Y = sample_trajectory(two_regime_model, 60, seed=8).observations
        result = infer(two_regime_model, Y, config=InferenceConfig(k_max=20, tolerance_epsilon=1e-10))
        assert np.all(np.diff(result.elbo_trace) >= -1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_bound_below_exact_evidence(self, two_regime_model, seed):
        Y = sample_trajectory(two_regime_model, 6, seed=seed).observations
        result = infer(two_regime_model, Y)
        exact = enumerate_exact(two_regime_model, Y, with_states=False)
        assert result.elbo <= exact.exact_log_evidence + 1e-8

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(100))
    def test_random_four_regime_instances(self, seed):
        rng = np.random.default_rng(seed)
        model = random_switching_model(rng, K=4, n=2, m=2)
        Y = sample_trajectory(model, 25, seed=seed).observations
        config = InferenceConfig(k_max=15, tolerance_epsilon=1e-9)

        trace = np.array(infer(model, Y, config=config).elbo_trace)
        assert np.all(np.diff(trace) >= -1e-6)

        short = infer(model, Y[:4], config=config)
        exact = enumerate_exact(model, Y[:4])
        assert short.elbo <= exact.exact_log_evidence + 1e-8

    @pytest.mark.parametrize(
        "config",
        [
            InferenceConfig(
                continuous_update=ContinuousUpdate.EFFECTIVE_PARAMS,
                discrete_update=DiscreteUpdate.SMOOTHED_INNOVATION,
                k_max=15,
                tolerance_epsilon=1e-9,
            ),
            InferenceConfig(
                discrete_update=DiscreteUpdate.SMOOTHED_INNOVATION,
                k_max=15,
                tolerance_epsilon=1e-9,
            ),
            InferenceConfig(
                continuous_update=ContinuousUpdate.EFFECTIVE_PARAMS,
                k_max=15,
                tolerance_epsilon=1e-9,
            ),
        ],
    )
    def test_alternative_updates_never_lower_the_bound(self, small_killchain_model, config):
        for seed in range(3):
            Y = sample_trajectory(small_killchain_model, 60, seed=seed).observations
            result = infer(small_killchain_model, Y, config=config)
            assert np.all(np.diff(result.elbo_trace) >= -1e-6)
            assert 0 <= result.exact_fallbacks < result.iterations

    @pytest.mark.parametrize("seed", range(5))
    def test_alternative_updates_stay_below_exact_evidence(self, two_regime_model, seed):
        Y = sample_trajectory(two_regime_model, 6, seed=seed).observations
        config = InferenceConfig(
            continuous_update=ContinuousUpdate.EFFECTIVE_PARAMS,
            discrete_update=DiscreteUpdate.SMOOTHED_INNOVATION,
        )
        result = infer(two_regime_model, Y, config=config)
        exact = enumerate_exact(two_regime_model, Y)
        assert result.elbo <= exact.exact_log_evidence + 1e-8

    def test_exact_updates_never_fall_back(self, small_killchain_model):
        Y = sample_trajectory(small_killchain_model, 60, seed=2).observations
        assert infer(small_killchain_model, Y).exact_fallbacks == 0

    def test_fixed_regime_is_recovered(self, small_killchain_model):
        model = small_killchain_model.replace(
            transition=TransitionMatrix(np.eye(4)),
            initial_regime_dist=np.array([0.0, 0.0, 1.0, 0.0]),
        )
        Y = sample_trajectory(model, 40, seed=1).observations
        result = infer(model, Y)
        assert np.all(result.posteriors.gamma.argmax(axis=1) == 2)

    def test_standalone_bound_matches_trace(self, two_regime_model):
        Y = sample_trajectory(two_regime_model, 25, seed=3).observations
        result = infer(two_regime_model, Y)
        value = elbo(two_regime_model, result.posteriors, result.smoothed, Y)
        assert value == pytest.approx(result.elbo, abs=1e-9)

    def test_is_deterministic(self, two_regime_model):
        Y = sample_trajectory(two_regime_model, 25, seed=3).observations
        first = infer(two_regime_model, Y)
        second = infer(two_regime_model, Y)
        assert first.elbo_trace == second.elbo_trace

    @pytest.mark.parametrize(
        "config",
        [
            InferenceConfig(continuous_update=ContinuousUpdate.EFFECTIVE_PARAMS),
            InferenceConfig(discrete_update=DiscreteUpdate.SMOOTHED_INNOVATION),
            InferenceConfig(gamma_init=GammaInit.UNIFORM, bank_workers=2),
        ],
    )
    def test_alternative_updates_run(self, small_killchain_model, config):
        Y = sample_trajectory(small_killchain_model, 30, seed=6).observations
        result = infer(small_killchain_model, Y, config=config)
        assert np.all(np.isfinite(result.elbo_trace))
        np.testing.assert_allclose(result.posteriors.gamma.sum(axis=1), 1.0)
        assert result.smoothed.means.shape == (30, 4)

    def test_single_observation(self, two_regime_model):
        result = infer(two_regime_model, np.array([[0.3]]))
        assert result.posteriors.gamma.shape == (1, 2)
        assert result.posteriors.xi.shape == (0, 2, 2)

    def test_rejects_empty_batch(self, two_regime_model):
        with pytest.raises(ValueError):
            infer(two_regime_model, np.empty((0, 1)))

    def test_rejects_wrong_width(self, two_regime_model):
        with pytest.raises(ValueError, match="columns"):
            infer(two_regime_model, np.zeros((5, 2)))

    def test_rejects_invalid_model(self):
        model = two_regime_scalar_model(R=(-0.1, 1.0))
        with pytest.raises(ModelValidationError):
            infer(model, np.zeros((5, 1)))

    def test_singular_observation_noise_is_floored(self):
        model = two_regime_scalar_model(R=(0.0, 1.0))
        Y = sample_trajectory(model, 20, seed=5).observations
        result = infer(model, Y)
        assert np.all(np.isfinite(result.elbo_trace))
        assert np.all(result.smoothed.covariances >= 0)
    @pytest.mark.slow
    def test_marginals_close_to_exact(self):
        model = two_regime_scalar_model(R=(0.2, 2.0))
        distances = []
        for seed in range(50):
            Y = sample_trajectory(model, 6, seed=seed).observations
            approx = infer(model, Y).posteriors.gamma
            exact = enumerate_exact(model, Y, with_states=False).exact_gamma
            distances.append(0.5 * np.abs(approx - exact).sum(axis=1))
        assert np.mean(distances) <= 0.15


class TestIterationScaling:
    """Per-iteration wall time."""

    def test_returns_one_timing_per_length(self, two_regime_model):
        timings = measure_iteration_scaling(two_regime_model, lengths=(20, 40), repeats=1)
        assert sorted(timings) == [20, 40]
        assert all(value > 0 for value in timings.values())

    @pytest.mark.slow
    def test_iteration_time_is_linear_in_length(self, killchain_model):
        timings = measure_iteration_scaling(killchain_model, lengths=(1000, 2000, 4000), repeats=3)
        ratios = [timings[2000] / timings[1000], timings[4000] / timings[2000]]
        assert all(1.6 <= r <= 2.6 for r in ratios), ratios
