"""Tests for Euler–Maruyama rollouts and pathwise gradients."""

import numpy as np
import pytest

from langevin_control import ControlError, DivergenceError, ZeroGradientError
from langevin_control.envs.fishing import FishingEnv
from langevin_control.nets import build
from langevin_control.sim import (
    BatchDraws,
    Environment,
    RolloutConfig,
    Step,
    draw_batch,
    draws_from_rng,
    gradient_check,
    loss_and_grad,
    parametrization_for,
    rollout,
)
from langevin_control.streams import TRAIN
from tests.conftest import SMALL_HIDDEN, fixed_draws, small_setup, with_output_bias


class ScalarEnv(Environment):
    """dX = b dt + s dW with terminal cost X_T² and no running cost."""

    name = "scalar"

    def __init__(self, b=0.0, s=0.0, x0=1.0, blow_up=False):
        self.b, self.s, self.x0, self.blow_up = b, s, x0, blow_up
        self.state_dim = self.noise_dim = self.control_dim = 1
        self.horizon = 1.0

    def sample_initial_state(self, rng):
        return np.array([self.x0])

    def drift(self, tape, x, u):
        if self.blow_up:
            return x * 1e308
        return tape.constant(np.full(x.shape, self.b))

    def diffusion(self, tape, x, u, xi):
        return tape.constant(self.s * np.asarray(xi))

    def running_cost(self, tape, step: Step):
        return tape.constant(np.zeros(step.x.shape[0]))

    def terminal_cost(self, tape, x):
        return tape.sum(tape.square(x))


def _scalar_setup(env, N=3):
    par = parametrization_for(env, "single", N, (4,))
    return par, build(par, 0)


class TestRolloutConfig:
    def test_time_grid(self):
        config = RolloutConfig(7, 2, horizon=0.7)
        assert config.time(0) == 0.0
        assert config.time(7) == 0.7
        assert config.h == pytest.approx(0.1)

    def test_rejects_zero_steps(self):
        with pytest.raises(ControlError, match="N must be"):
            RolloutConfig(0, 4)


class TestRollout:
    def test_frozen_dynamics(self):
        env = ScalarEnv(x0=1.5)
        par, params = _scalar_setup(env)
        config = RolloutConfig(3, 4)
        draws = draws_from_rng(env, config, np.random.default_rng(0))
        result = rollout(env, params, par, config, draws)
        np.testing.assert_array_equal(result.batch.states, 1.5)
        assert float(result.loss.value) == pytest.approx(2.25)

    def test_batch_shapes(self, fishing_small):
        env, par, params = fishing_small
        config, draws = fixed_draws(env, 5, batch_size=3)
        batch = rollout(env, params, par, config, draws, grad=False).batch
        assert batch.states.shape == (3, 6, 5)
        assert batch.controls.shape == (3, 5, 5)
        assert batch.noises.shape == (3, 5, 5)
        assert batch.per_sample_objective.shape == (3,)
        np.testing.assert_array_equal(batch.states[:, 0], draws.x0)

    def test_one_step_monte_carlo(self):
        env = ScalarEnv(b=0.5, s=0.3, x0=1.0)
        par, params = _scalar_setup(env, N=1)
        config = RolloutConfig(1, 20_000)
        draws = draws_from_rng(env, config, np.random.default_rng(42))
        values = rollout(env, params, par, config, draws, grad=False).batch.per_sample_objective
        expected = (1.0 + 0.5) ** 2 + 0.3**2
        stderr = values.std(ddof=1) / np.sqrt(values.size)
        assert abs(values.mean() - expected) < 3 * stderr

    def test_standard_error_scales_with_sample_count(self, fishing_small):
        env, par, params = fishing_small
        config = RolloutConfig(5, 64_000, env.horizon)
        draws = draws_from_rng(env, config, np.random.default_rng(7))
        values = rollout(env, params, par, config, draws, grad=False).batch.per_sample_objective
        small = values.reshape(-1, 16).mean(axis=1)
        large = values.reshape(-1, 64).mean(axis=1)
        assert small.var(ddof=1) / large.var(ddof=1) == pytest.approx(4.0, rel=0.2)

    def test_divergence_names_step(self):
        env = ScalarEnv(x0=10.0, blow_up=True)
        par, params = _scalar_setup(env)
        config = RolloutConfig(3, 2)
        draws = draws_from_rng(env, config, np.random.default_rng(0))
        with pytest.raises(DivergenceError, match="step 0") as excinfo:
            rollout(env, params, par, config, draws)
        assert excinfo.value.step == 0

    def test_noise_shape_mismatch(self, fishing_small):
        env, par, params = fishing_small
        config = RolloutConfig(5, 2)
        draws = BatchDraws(np.ones((2, 5)), np.zeros((2, 4, 5)))
        with pytest.raises(ControlError, match="do not match"):
            rollout(env, params, par, config, draws)

    def test_steps_must_match_parametrization(self, fishing_small):
        env, par, params = fishing_small
        config, draws = fixed_draws(env, 6)
        with pytest.raises(ControlError, match="Parametrization has 5 steps"):
            rollout(env, params, par, config, draws)


class TestDraws:
    def test_stream_is_keyed_per_sample(self):
        env = FishingEnv()
        config = RolloutConfig(4, 6)
        full = draw_batch(env, config, 1, TRAIN, 0, 0)
        tail = draw_batch(env, RolloutConfig(4, 2), 1, TRAIN, 0, 0, start=4)
        np.testing.assert_array_equal(full.xi[4:], tail.xi)
        np.testing.assert_array_equal(full.x0[4:], tail.x0)

    def test_keys_give_distinct_batches(self):
        env = FishingEnv()
        config = RolloutConfig(4, 2)
        a = draw_batch(env, config, 1, TRAIN, 0, 0)
        b = draw_batch(env, config, 1, TRAIN, 0, 1)
        assert not np.array_equal(a.xi, b.xi)


class TestLossAndGrad:
    def test_deterministic(self, fishing_small):
        env, par, params = fishing_small
        config, draws = fixed_draws(env, 5)
        l1, g1 = loss_and_grad(env, params, par, config, draws)
        l2, g2 = loss_and_grad(env, params, par, config, draws)
        assert l1 == l2
        assert g1.tobytes() == g2.tobytes()

    def test_half_batches_average(self, fishing_small):
        env, par, params = fishing_small
        config, draws = fixed_draws(env, 5, batch_size=4)
        half = RolloutConfig(5, 2, env.horizon)
        _, full = loss_and_grad(env, params, par, config, draws)
        _, first = loss_and_grad(env, params, par, half, draws.take(0, 2))
        _, second = loss_and_grad(env, params, par, half, draws.take(2, 4))
        np.testing.assert_allclose((first + second) / 2, full, atol=1e-12)

    def test_causality(self):
        cut = 3

        class LateCostFishing(FishingEnv):
            def running_cost(self, tape, step):
                cost = super().running_cost(tape, step)
                return cost * 0.0 if step.k < cut else cost

        env, par, params = small_setup("fishing", mode="per_timestep", N=5)
        late = LateCostFishing(env.params)
        config, draws = fixed_draws(env, 5)
        _, full = loss_and_grad(env, params, par, config, draws)
        _, trimmed = loss_and_grad(late, params, par, config, draws)
        start, stop = params.registry.network_range(cut)
        np.testing.assert_allclose(trimmed[start:stop], full[start:stop], atol=1e-12)


class TestGradientCheck:
    @pytest.mark.parametrize("env_name", ["fishing", "hedging"])
    def test_matches_finite_differences(self, env_name):
        env, par, params = small_setup(env_name, N=5, hidden=SMALL_HIDDEN)
        assert gradient_check(env, params, par, batch_size=2, seed=0) < 1e-4

    def test_oil_with_open_heads(self):
        env, par, params = small_setup("oil", N=5, hidden=SMALL_HIDDEN)
        params = with_output_bias(params, np.array([1.0, 0.5, 0.25]))
        assert gradient_check(env, params, par, batch_size=2, seed=0) < 1e-4

    def test_closed_heads_raise(self):
        env, par, params = small_setup("oil", N=5, hidden=SMALL_HIDDEN)
        params = with_output_bias(params, -1.0)
        with pytest.raises(ZeroGradientError, match="zero on all"):
            gradient_check(env, params, par)

    def test_control_free_objective_raises(self):
        env = ScalarEnv(b=0.5, s=0.3)
        par, params = _scalar_setup(env)
        with pytest.raises(ZeroGradientError):
            gradient_check(env, params, par)

    def test_per_timestep_fishing(self):
        env, par, params = small_setup("fishing", mode="per_timestep", N=3, hidden=(4,))
        assert gradient_check(env, params, par) < 1e-4
