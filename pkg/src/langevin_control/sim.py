"""Differentiable Euler–Maruyama rollouts of controlled SDEs.

An :class:`Environment` describes one control problem.  :func:`rollout`
simulates a batch of trajectories on a :class:`~langevin_control.tape.Tape`
with the controls produced by the networks, and :func:`loss_and_grad` returns
the batch-mean objective with its pathwise gradient.

Noise is generated per sample from :mod:`langevin_control.streams`, so a
batch is a pure function of its stream coordinates.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Mapping
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from langevin_control import ControlError, DivergenceError, ZeroGradientError
from langevin_control.nets import (
    ControlParametrization,
    ParamVector,
    control_forward,
    default_head,
    make_parametrization,
)
from langevin_control.streams import CHECK, sample_generator
from langevin_control.tape import Tape, Var, finite_diff_check, value_and_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Step:
    """Everything a running cost may look at for step k → k+1."""

    k: int
    t_k: float
    t_next: float
    h: float
    x: Var
    x_next: Var
    u: Var
    u_prev: Var | None


class Environment(ABC):
    """One stochastic control problem.

    Subclasses provide the drift b(x, u), the diffusion applied to the noise
    draw σ(x, u)·ξ, the running cost of a step and the initial law.  The
    default :meth:`transition` is the Euler–Maruyama step
    ``x + h b + sqrt(h) σ ξ``; :meth:`terminal` turns the accumulated running
    cost into the per-sample objective.
    """

    name: ClassVar[str]
    output_head: ClassVar[str] = "linear"
    extra_params: ClassVar[Mapping[str, int]] = {}

    state_dim: int
    noise_dim: int
    control_dim: int
    horizon: float

    @property
    def feature_dim(self) -> int:
        return self.state_dim

    @property
    def head_bounds(self) -> tuple[float, float] | None:
        return None

    @abstractmethod
    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        """One draw of X_0, shape (state_dim,)."""

    def features(self, tape: Tape, k: int, x: Var, u_prev: Var | None) -> Var:
        return x

    def control_head(self, tape: Tape, raw: Var, x: Var, h: float) -> Var | None:
        """Environment-specific output head, or None to use the MlpSpec head."""
        return None

    @abstractmethod
    def drift(self, tape: Tape, x: Var, u: Var) -> Var:
        """b(x, u), shape (batch, state_dim)."""

    @abstractmethod
    def diffusion(self, tape: Tape, x: Var, u: Var, xi: np.ndarray) -> Var:
        """σ(x, u)·ξ for one noise draw ξ of shape (batch, noise_dim)."""

    def transition(self, tape: Tape, k: int, x: Var, u: Var, xi: np.ndarray, h: float) -> Var:
        noise = self.diffusion(tape, x, u, xi) * float(np.sqrt(h))
        return x + self.drift(tape, x, u) * h + noise

    @abstractmethod
    def running_cost(self, tape: Tape, step: Step) -> Var:
        """Cost of one step, shape (batch,)."""

    def terminal_cost(self, tape: Tape, x: Var) -> Var | None:
        return None

    def terminal(
        self,
        tape: Tape,
        x_last: Var,
        u_last: Var,
        running_total: Var,
        params: ParamVector,
    ) -> Var:
        """Per-sample objective from the accumulated running cost.

        ``params`` gives access to trainables kept outside the networks.
        """
        final = self.terminal_cost(tape, x_last)
        return running_total if final is None else running_total + final

    def check_step(self, step: Step) -> None:
        """Hook for constraint assertions; raise ConstraintViolation to stop the rollout."""

    def describe(self) -> dict[str, object]:
        return {
            "state_dim": self.state_dim,
            "noise_dim": self.noise_dim,
            "control_dim": self.control_dim,
            "feature_dim": self.feature_dim,
            "horizon": self.horizon,
            "output_head": self.output_head,
        }


def parametrization_for(
    env: Environment,
    mode: str,
    num_timesteps: int,
    hidden_dims: tuple[int, ...] = (32, 32),
) -> ControlParametrization:
    return make_parametrization(
        mode,
        env.feature_dim,
        env.control_dim,
        num_timesteps,
        hidden_dims=hidden_dims,
        output_head=env.output_head,
        head_bounds=env.head_bounds,
        horizon=env.horizon,
    )


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RolloutConfig:
    N: int
    batch_size: int
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ControlError(f"N must be >= 1, got {self.N}")
        if self.batch_size < 1:
            raise ControlError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.horizon > 0:
            raise ControlError(f"horizon must be > 0, got {self.horizon}")

    @property
    def h(self) -> float:
        return self.horizon / self.N

    def time(self, k: int) -> float:
        return k * self.horizon / self.N


@dataclass(frozen=True)
class BatchDraws:
    """Initial states (batch, d1) and noises (batch, N, d2) of one batch."""

    x0: np.ndarray
    xi: np.ndarray

    @property
    def batch_size(self) -> int:
        return int(self.x0.shape[0])

    def take(self, start: int, stop: int) -> BatchDraws:
        return BatchDraws(self.x0[start:stop], self.xi[start:stop])


def draws_from_rng(
    env: Environment, config: RolloutConfig, rng: np.random.Generator
) -> BatchDraws:
    """Draw a batch sample by sample from one generator."""
    x0 = np.empty((config.batch_size, env.state_dim))
    xi = np.empty((config.batch_size, config.N, env.noise_dim))
    for i in range(config.batch_size):
        x0[i] = env.sample_initial_state(rng)
        xi[i] = rng.standard_normal((config.N, env.noise_dim))
    return BatchDraws(x0, xi)


def draw_batch(
    env: Environment,
    config: RolloutConfig,
    seed: int,
    *key: int,
    start: int = 0,
) -> BatchDraws:
    """Draw samples ``start .. start + batch_size`` of the stream ``(seed, *key)``."""
    x0 = np.empty((config.batch_size, env.state_dim))
    xi = np.empty((config.batch_size, config.N, env.noise_dim))
    for i in range(config.batch_size):
        rng = sample_generator(seed, *key, start + i)
        x0[i] = env.sample_initial_state(rng)
        xi[i] = rng.standard_normal((config.N, env.noise_dim))
    return BatchDraws(x0, xi)


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (batch, N + 1, d1)
    controls: np.ndarray  # (batch, N, d3)
    noises: np.ndarray  # (batch, N, d2)
    per_sample_objective: np.ndarray  # (batch,)


@dataclass
class Rollout:
    tape: Tape
    loss: Var
    batch: TrajectoryBatch


def rollout(
    env: Environment,
    params: ParamVector,
    parametrization: ControlParametrization,
    config: RolloutConfig,
    draws: BatchDraws,
    *,
    tape: Tape | None = None,
    grad: bool = True,
) -> Rollout:
    """Simulate ``draws`` under the network controls and record the objective."""
    if draws.xi.shape[1:] != (config.N, env.noise_dim):
        raise ControlError(
            f"Noise draws of shape {draws.xi.shape} do not match N={config.N}, "
            f"noise_dim={env.noise_dim}"
        )
    if parametrization.num_timesteps != config.N:
        raise ControlError(
            f"Parametrization has {parametrization.num_timesteps} steps, rollout has N={config.N}"
        )
    if tape is None:
        tape = Tape(params.data, grad_enabled=grad)
    h = config.h

    x = tape.constant(draws.x0)
    u_prev: Var | None = None
    total: Var = tape.constant(np.zeros(draws.batch_size))
    states = [draws.x0]
    controls = []
    for k in range(config.N):
        t_k, t_next = config.time(k), config.time(k + 1)
        feats = env.features(tape, k, x, u_prev)
        raw = control_forward(tape, params, parametrization, k, t_k, feats, head=lambda r: r)
        u = env.control_head(tape, raw, x, h)
        if u is None:
            u = default_head(tape, parametrization.spec)(raw)
        x_next = env.transition(tape, k, x, u, draws.xi[:, k], h)
        if not np.all(np.isfinite(x_next.value)):
            raise DivergenceError(f"Non-finite state in {env.name} rollout", step=k)
        step = Step(k, t_k, t_next, h, x, x_next, u, u_prev)
        env.check_step(step)
        total = total + env.running_cost(tape, step)
        states.append(x_next.value)
        controls.append(u.value)
        x, u_prev = x_next, u

    assert u_prev is not None
    objective = env.terminal(tape, x, u_prev, total, params)
    if not np.all(np.isfinite(objective.value)):
        raise DivergenceError(f"Non-finite objective in {env.name} rollout", step=config.N)
    loss = tape.mean(objective)
    batch = TrajectoryBatch(
        states=np.stack(states, axis=1),
        controls=np.stack(controls, axis=1),
        noises=draws.xi,
        per_sample_objective=objective.value.copy(),
    )
    return Rollout(tape, loss, batch)


def loss_and_grad(
    env: Environment,
    params: ParamVector,
    parametrization: ControlParametrization,
    config: RolloutConfig,
    draws: BatchDraws,
) -> tuple[float, np.ndarray]:
    """Batch-mean objective and its gradient with respect to every parameter."""
    result = rollout(env, params, parametrization, config, draws)
    grad = result.tape.backward(result.loss)
    return float(result.loss.value), grad


def gradient_check(
    env: Environment,
    params: ParamVector,
    parametrization: ControlParametrization,
    *,
    batch_size: int = 2,
    seed: int = 0,
    step: float = 1e-5,
    relative_floor: float = 0.0,
) -> float:
    """Finite-difference check of :func:`loss_and_grad` on one fixed batch.

    The gap of coordinate i is ``|fd_i - g_i| / (|g_i| + 1e-12)``; a positive
    ``relative_floor`` raises the denominator to ``relative_floor * max|g|``.
    Raises :class:`~langevin_control.ZeroGradientError` when the gradient is
    zero on every coordinate.
    """
    config = RolloutConfig(parametrization.num_timesteps, batch_size, env.horizon)
    draws = draw_batch(env, config, seed, CHECK)

    def objective(tape: Tape) -> Var:
        return rollout(env, params, parametrization, config, draws, tape=tape).loss

    _, grad = value_and_grad(objective, params.data)
    if not np.any(grad):
        raise ZeroGradientError(
            f"Gradient of the {env.name} objective is zero on all {grad.size} coordinates"
        )
    return finite_diff_check(objective, params.data, step, relative_floor=relative_floor)
