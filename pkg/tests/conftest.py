"""Shared fixtures: small environments, networks and configs that train in seconds."""

import numpy as np
import pytest

from langevin_control.config import resolve_config
from langevin_control.envs import make_environment
from langevin_control.nets import build
from langevin_control.sim import RolloutConfig, draw_batch, parametrization_for
from langevin_control.streams import CHECK

SMALL_HIDDEN = (8, 8)


def small_setup(env_name: str, mode: str = "single", N: int = 5, hidden=SMALL_HIDDEN, **params):
    """Environment, parametrization and seeded parameters for a quick rollout."""
    env = make_environment(env_name, params)
    par = parametrization_for(env, mode, N, hidden)
    return env, par, build(par, 0, env.extra_params)


def fixed_draws(env, N: int, batch_size: int = 2, seed: int = 0):
    config = RolloutConfig(N, batch_size, env.horizon)
    return config, draw_batch(env, config, seed, CHECK)


@pytest.fixture
def fishing_small():
    return small_setup("fishing")


@pytest.fixture
def tiny_raw():
    """Raw config for a fishing run of a few seconds."""
    return {
        "env": "fishing",
        "N": 4,
        "batch_size": 8,
        "batches_per_epoch": 2,
        "epochs": 2,
        "eval_mult": 2,
        "hidden": list(SMALL_HIDDEN),
    }


@pytest.fixture
def tiny_config(tiny_raw):
    return resolve_config(tiny_raw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def with_output_bias(params, bias):
    """Zero every output-layer weight and set the output biases, so each head sees ``bias``."""
    data = params.data.copy()
    last = max(entry.layer for entry in params.registry.entries)
    for entry in params.registry.entries:
        if entry.layer == last:
            data[slice(*entry.weight_range)] = 0.0
            data[slice(*entry.bias_range)] = bias
    return params.with_data(data)
