"""Fishing quotas: keep a multi-species biomass near a target with bounded quotas.

Dynamics ``dX = X * ((r - u - κX) dt + η dW)``; running cost
``|X - target|² - <α, u>`` plus ``β`` times the discrete quadratic variation
of the quota path.  Quotas come out of a sigmoid head inside ``(u_m, u_M)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from langevin_control import ControlError
from langevin_control.envs.params import broadcast_fields, params_to_dict
from langevin_control.sim import Environment, Step
from langevin_control.tape import Tape, Var, evaluate

log = logging.getLogger(__name__)

DEFAULT_KAPPA = (
    (1.2, -0.1, 0.0, 0.0, -0.1),
    (0.2, 1.2, 0.0, 0.0, -0.1),
    (0.0, 0.2, 1.2, -0.1, 0.0),
    (0.0, 0.0, 0.1, 1.2, 0.0),
    (0.1, 0.1, 0.0, 0.0, 1.2),
)


@dataclass(frozen=True, eq=False)
class FishingParams:
    species: int = 5
    T: float = 1.0
    r: np.ndarray = field(default_factory=lambda: np.full(5, 2.0))
    kappa: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_KAPPA))
    eta: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(5))
    target: np.ndarray = field(default_factory=lambda: np.ones(5))
    alpha: np.ndarray = field(default_factory=lambda: np.full(5, 0.01))
    beta: float = 0.1
    u_min: float = 0.1
    u_max: float = 1.0
    init_mean: float = 1.0
    init_var: float = 0.5
    init_low: float = 0.2
    init_high: float = 2.0

    def __post_init__(self) -> None:
        d = self.species
        if d < 1:
            raise ControlError(f"species must be >= 1, got {d}")
        broadcast_fields(self, d, ("r", "target", "alpha"))
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=np.float64))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=np.float64))
        checks = {
            "r": (self.r, (d,)),
            "kappa": (self.kappa, (d, d)),
            "target": (self.target, (d,)),
            "alpha": (self.alpha, (d,)),
        }
        for name, (arr, shape) in checks.items():
            if np.shape(arr) != shape:
                raise ControlError(f"fishing {name} must have shape {shape}, got {np.shape(arr)}")
        if np.ndim(self.eta) != 2 or np.shape(self.eta)[0] != d:
            raise ControlError(f"fishing eta must have shape ({d}, d2), got {np.shape(self.eta)}")
        if not self.u_min < self.u_max:
            raise ControlError(f"fishing needs u_min < u_max, got {self.u_min}, {self.u_max}")
        if self.beta < 0:
            raise ControlError(f"fishing beta must be >= 0, got {self.beta}")
        if not self.init_low <= self.init_high:
            raise ControlError("fishing init_low must not exceed init_high")

    @property
    def noise_dim(self) -> int:
        return int(np.shape(self.eta)[1])


# ---------------------------------------------------------------------------
# Tape-level model
# ---------------------------------------------------------------------------


def _drift(tape: Tape, x: Var, u: Var, p: FishingParams) -> Var:
    return x * (p.r - u - tape.matvec(p.kappa, x))


def _noise(tape: Tape, x: Var, xi: np.ndarray, p: FishingParams) -> Var:
    return x * (np.asarray(xi) @ np.asarray(p.eta).T)


def _cost(
    tape: Tape, x_next: Var, u: Var, u_prev: Var | None, h: float, p: FishingParams
) -> Var:
    tracking = tape.sum(tape.square(x_next - p.target)) - tape.dot(u, p.alpha)
    cost = tracking * h
    if u_prev is not None:
        cost = cost + tape.sum(tape.square(u - u_prev)) * p.beta
    return cost


# ---------------------------------------------------------------------------
# Array-level operations
# ---------------------------------------------------------------------------


def fishing_drift(x: np.ndarray, u: np.ndarray, params: FishingParams) -> np.ndarray:
    """x * (r - u - κx)."""
    return evaluate(lambda t, xv, uv: _drift(t, xv, uv, params), x, u)


def fishing_diffusion(x: np.ndarray, params: FishingParams) -> np.ndarray:
    """The d1 × d2 diffusion matrix: row i of η scaled by x_i."""
    return np.asarray(x)[..., :, None] * np.asarray(params.eta)


def fishing_cost(
    t_next: float,
    x_next: np.ndarray,
    u: np.ndarray,
    u_prev: np.ndarray | None,
    h: float,
    params: FishingParams,
) -> float:
    """h (|x' - target|² - <α, u>) + β |u - u_prev|²; no variation term at k = 0."""
    tape = Tape(grad_enabled=False)
    prev = None if u_prev is None else tape.constant(u_prev)
    return float(_cost(tape, tape.constant(x_next), tape.constant(u), prev, h, params).value)


def fishing_initial_state(rng: np.random.Generator, params: FishingParams) -> np.ndarray:
    """N(init_mean, init_var · I) clipped into [init_low, init_high]."""
    draw = params.init_mean + np.sqrt(params.init_var) * rng.standard_normal(params.species)
    return np.clip(draw, params.init_low, params.init_high)


class FishingEnv(Environment):
    name = "fishing"
    output_head = "sigmoid_box"

    def __init__(self, params: FishingParams | None = None) -> None:
        self.params = params or FishingParams()
        self.state_dim = self.params.species
        self.noise_dim = self.params.noise_dim
        self.control_dim = self.params.species
        self.horizon = self.params.T

    @property
    def head_bounds(self) -> tuple[float, float]:
        return self.params.u_min, self.params.u_max

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return fishing_initial_state(rng, self.params)

    def drift(self, tape: Tape, x: Var, u: Var) -> Var:
        return _drift(tape, x, u, self.params)

    def diffusion(self, tape: Tape, x: Var, u: Var, xi: np.ndarray) -> Var:
        return _noise(tape, x, xi, self.params)

    def running_cost(self, tape: Tape, step: Step) -> Var:
        return _cost(tape, step.x_next, step.u, step.u_prev, step.h, self.params)

    def describe(self) -> dict[str, object]:
        return {**super().describe(), **params_to_dict(self.params)}
