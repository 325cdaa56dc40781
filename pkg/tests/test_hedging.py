"""Tests for the Heston deep-hedging environment."""

import numpy as np
import pytest

from langevin_control import ControlError, DivergenceError
from langevin_control.envs.hedging import (
    HedgingEnv,
    HestonParams,
    basket_payoff,
    cvar_loss,
    heston_step,
    hedging_objective,
    risk_level_scan,
    tradables,
    variance_swap,
)
from langevin_control.nets import build
from langevin_control.sim import (
    RolloutConfig,
    TrajectoryBatch,
    draw_batch,
    loss_and_grad,
    parametrization_for,
    rollout,
)
from langevin_control.streams import EVAL, TRAIN
from langevin_control.tape import Tape


def one_model(**overrides) -> HestonParams:
    values = dict(
        models=1, a=1.0, b=0.04, eta=2.0, rho=-0.7, s0=1.0, v0=0.1, strike=1.0, c_tr=5e-4
    )
    values.update(overrides)
    return HestonParams(**values)


def simulate_paths(params: HestonParams, n_paths: int, n_steps: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    d = params.models
    x = np.tile(np.concatenate([params.s0, params.v0, np.zeros(d)]), (n_paths, 1))
    states = [x]
    h = params.T / n_steps
    for _ in range(n_steps):
        x = heston_step(
            x, rng.standard_normal((n_paths, d)), rng.standard_normal((n_paths, d)), h, params
        )
        states.append(x)
    return np.stack(states, axis=1)


class TestHestonStep:
    def test_deterministic_variance_step(self):
        out = heston_step(np.array([1.0, 0.1, 0.0]), np.zeros(1), np.zeros(1), 0.01, one_model())
        np.testing.assert_allclose(out, [1.0, 0.0994, 0.001])

    def test_long_run_level_is_stationary(self):
        out = heston_step(np.array([1.0, 0.04, 0.0]), np.zeros(1), np.zeros(1), 0.01, one_model())
        assert out[1] == pytest.approx(0.04)

    def test_full_truncation(self):
        x = np.array([1.3, -0.01, 0.2])
        out = heston_step(x, np.array([2.0]), np.array([-1.0]), 0.01, one_model())
        np.testing.assert_allclose(out, [1.3, -0.01 + 0.04 * 0.01, 0.2])

    def test_spot_variance_correlation(self):
        params = HestonParams()
        rng = np.random.default_rng(3)
        n = 20_000
        x = np.tile(np.concatenate([params.s0, params.v0, np.zeros(5)]), (n, 1))
        out = heston_step(
            x, rng.standard_normal((n, 5)), rng.standard_normal((n, 5)), 0.01, params
        )
        log_return = np.log(out[:, :5] / x[:, :5]).ravel()
        dv = (out[:, 5:10] - x[:, 5:10]).ravel()
        corr = np.corrcoef(log_return, dv)[0, 1]
        assert abs(corr - (-0.7)) < 3 * (1 - 0.49) / np.sqrt(log_return.size)

    def test_rejects_bad_step(self):
        with pytest.raises(ControlError, match="h must be > 0"):
            heston_step(np.array([1.0, 0.1, 0.0]), np.zeros(1), np.zeros(1), 0.0, one_model())


class TestVarianceSwap:
    def test_reference_value(self):
        np.testing.assert_allclose(variance_swap(0.0, 0.1, one_model()), 0.0779272, atol=1e-7)

    def test_expires_at_maturity(self):
        assert variance_swap(1.0, 0.3, one_model()) == pytest.approx(0.0)

    def test_long_run_level(self):
        assert variance_swap(0.25, 0.04, one_model()) == pytest.approx(0.04 * 0.75)

    def test_flipped_form_differs(self):
        flipped = variance_swap(0.0, 0.1, one_model(swap_form="flipped"))
        assert not np.allclose(flipped, 0.0779272, atol=1e-3)

    def test_matches_simulated_integrated_variance(self):
        params = one_model(eta=0.1)
        states = simulate_paths(params, 10_000, 1000, seed=11)
        integrated = states[:, -1, 2]
        stderr = integrated.std(ddof=1) / np.sqrt(integrated.size)
        expected = float(variance_swap(0.0, 0.1, params)[0])
        assert abs(integrated.mean() - expected) < 3 * stderr + 5e-5

    def test_tradables_layout(self):
        params = one_model()
        prices = tradables(0.0, np.array([1.2, 0.1, 0.0]), params)
        np.testing.assert_allclose(prices, [1.2, 0.0779272], atol=1e-7)


class TestRiskObjective:
    def test_cvar_loss(self):
        assert cvar_loss(1.0, 0.9) == pytest.approx(10.0)
        assert cvar_loss(-1.0, 0.9) == 0.0

    def test_basket_payoff(self):
        assert basket_payoff(np.full(5, 1.5), HestonParams()) == pytest.approx(2.5)

    def test_scan_is_convex(self, rng):
        losses = rng.standard_normal(1000)
        levels = np.linspace(-3, 3, 121)
        values = risk_level_scan(losses, levels, 0.9)
        assert np.all(np.diff(values, 2) >= -1e-12)

    def test_scan_cash_invariance(self, rng):
        losses = rng.standard_normal(500)
        levels = np.linspace(-2, 3, 51)
        base = risk_level_scan(losses, levels, 0.9)
        shifted = risk_level_scan(losses + 0.7, levels + 0.7, 0.9)
        np.testing.assert_allclose(shifted, base + 0.7, atol=1e-12)
        assert np.argmin(shifted) == np.argmin(base)

    def _batch(self, params, controls_value, n_paths=200, n_steps=10):
        states = simulate_paths(params, n_paths, n_steps, seed=5)
        controls = np.broadcast_to(controls_value, (n_paths, n_steps, 2 * params.models)).copy()
        return TrajectoryBatch(
            states, controls, np.zeros((n_paths, n_steps, 2 * params.models)), np.zeros(n_paths)
        )

    def test_no_position_reduces_to_payoff(self):
        params = HestonParams()
        batch = self._batch(params, 0.0)
        z = basket_payoff(batch.states[:, -1, :5], params)
        w = 0.3
        expected = float(risk_level_scan(z, [w], params.alpha)[0])
        assert hedging_objective(batch, w, params) == pytest.approx(expected)

    def test_costless_static_hedge_telescopes(self):
        params = HestonParams(c_tr=0.0)
        held = np.concatenate([np.full(5, 0.5), np.zeros(5)])
        batch = self._batch(params, held)
        spot = batch.states[:, :, :5]
        gains = 0.5 * np.sum(spot[:, -1] - spot[:, 0], axis=-1)
        z = basket_payoff(spot[:, -1], params)
        w = -100.0
        expected = w + np.mean(z - gains - w) / (1 - params.alpha)
        assert hedging_objective(batch, w, params) == pytest.approx(expected, rel=1e-12)


class TestParams:
    def test_rho_range(self):
        with pytest.raises(ControlError, match="rho"):
            HestonParams(rho=-1.5)

    def test_positive_eta(self):
        with pytest.raises(ControlError, match="eta"):
            one_model(eta=0.0)

    def test_swap_form(self):
        with pytest.raises(ControlError, match="swap_form"):
            one_model(swap_form="exact")

    def test_alpha_range(self):
        with pytest.raises(ControlError, match="alpha"):
            HestonParams(alpha=1.0)


class TestEnvironment:
    def test_dimensions(self):
        env = HedgingEnv()
        assert (env.state_dim, env.noise_dim, env.control_dim) == (15, 10, 10)
        assert env.feature_dim == 20

    def test_features_start_flat(self):
        env = HedgingEnv()
        tape = Tape(grad_enabled=False)
        x = tape.constant(np.tile(env.sample_initial_state(None), (2, 1)))
        feats = env.features(tape, 0, x, None)
        assert feats.shape == (2, 20)
        np.testing.assert_array_equal(feats.value[:, :5], 0.0)
        np.testing.assert_array_equal(feats.value[:, 10:], 0.0)

    def test_non_positive_spot(self):
        env = HedgingEnv()
        tape = Tape(grad_enabled=False)
        state = np.tile(env.sample_initial_state(None), (2, 1))
        state[1, 0] = -0.01
        with pytest.raises(DivergenceError) as info:
            env.features(tape, 4, tape.constant(state), None)
        assert info.value.step == 4

    def test_rollout_positions_are_long(self):
        env = HedgingEnv()
        par = parametrization_for(env, "single", 6, (8, 8))
        params = build(par, 1, env.extra_params)
        config = RolloutConfig(6, 16)
        batch = rollout(
            env, params, par, config, draw_batch(env, config, 0, EVAL, 0), grad=False
        ).batch
        assert batch.controls.min() >= 0.0
        assert batch.states.shape == (16, 7, 15)

    def test_risk_level_is_trained(self):
        env = HedgingEnv()
        par = parametrization_for(env, "single", 4, (8, 8))
        params = build(par, 2, env.extra_params)
        start, stop = params.registry.extras["w"]
        assert stop - start == 1
        config = RolloutConfig(4, 8)
        _, grad = loss_and_grad(env, params, par, config, draw_batch(env, config, 0, TRAIN, 0, 0))
        assert grad[start] != 0.0
