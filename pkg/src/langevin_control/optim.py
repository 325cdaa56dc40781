"""Preconditioned stochastic gradient steps and their Langevin versions.

Each base step returns the new parameters, the advanced state and the
diagonal preconditioner it used, so the Langevin wrappers can inject
``sigma * sqrt(gamma) * N(0, P)`` with exactly that preconditioner.

States are immutable: a step returns a fresh :class:`OptimizerState`.
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from functools import partial
from typing import NamedTuple

import numpy as np

from langevin_control import ControlError
from langevin_control.nets import LayerRegistry
from langevin_control.streams import sequential_generator

log = logging.getLogger(__name__)

VALID_OPTIMIZERS = {"adam", "rmsprop", "adadelta"}
VALID_VARIANTS = {"base", "langevin", "layer_langevin"}
VALID_ADADELTA_FORMS = {"lagged", "standard"}


@dataclass(frozen=True)
class Hyper:
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.9
    lam: float = 1e-7


DEFAULT_HYPER: dict[str, Hyper] = {
    "adam": Hyper(beta1=0.9, beta2=0.999, lam=1e-7),
    "rmsprop": Hyper(alpha=0.9, lam=1e-7),
    "adadelta": Hyper(beta1=0.95, beta2=0.95, lam=1e-6),
}


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    ms: np.ndarray
    ms_hat: np.ndarray
    n: int = 0
    hyper: Hyper = field(default_factory=Hyper)

    @classmethod
    def fresh(cls, size: int, hyper: Hyper) -> OptimizerState:
        return cls(np.zeros(size), np.zeros(size), np.zeros(size), 0, hyper)


class StepResult(NamedTuple):
    theta: np.ndarray
    state: OptimizerState
    precond: np.ndarray


BaseStep = Callable[[OptimizerState, np.ndarray, np.ndarray, float], StepResult]


def _check_shapes(state: OptimizerState, theta: np.ndarray, g: np.ndarray) -> None:
    if not theta.shape == g.shape == state.ms.shape:
        raise ValueError(
            f"Shape mismatch: theta {theta.shape}, gradient {g.shape}, state {state.ms.shape}"
        )


def adam_step(state: OptimizerState, theta: np.ndarray, g: np.ndarray, gamma: float) -> StepResult:
    _check_shapes(state, theta, g)
    h = state.hyper
    m = h.beta1 * state.m + (1.0 - h.beta1) * g
    ms = h.beta2 * state.ms + (1.0 - h.beta2) * g * g
    m_hat = m / (1.0 - h.beta1 ** (state.n + 1))
    ms_hat = ms / (1.0 - h.beta2 ** (state.n + 1))
    precond = 1.0 / (h.lam + np.sqrt(ms_hat))
    new_theta = theta - gamma * precond * m_hat
    return StepResult(new_theta, replace(state, m=m, ms=ms, n=state.n + 1), precond)


def rmsprop_step(
    state: OptimizerState, theta: np.ndarray, g: np.ndarray, gamma: float
) -> StepResult:
    _check_shapes(state, theta, g)
    h = state.hyper
    ms = h.alpha * state.ms + (1.0 - h.alpha) * g * g
    precond = 1.0 / (h.lam + np.sqrt(ms))
    new_theta = theta - gamma * precond * g
    return StepResult(new_theta, replace(state, ms=ms, n=state.n + 1), precond)


def adadelta_step(
    state: OptimizerState,
    theta: np.ndarray,
    g: np.ndarray,
    gamma: float,
    *,
    form: str = "lagged",
) -> StepResult:
    """Adadelta update.

    ``form="lagged"`` builds P from the previous ``ms_hat`` and refreshes
    ``ms_hat`` from the previous ``ms``.  ``form="standard"`` is the classical
    recursion with P = sqrt(lam + ms_hat) / sqrt(lam + ms').
    """
    _check_shapes(state, theta, g)
    h = state.hyper
    ms = h.beta1 * state.ms + (1.0 - h.beta1) * g * g
    if form == "lagged":
        precond = (h.lam + state.ms_hat) / (h.lam + np.sqrt(state.ms_hat))
        new_theta = theta - gamma * precond * g
        delta = new_theta - theta
        ms_hat = h.beta2 * state.ms + (1.0 - h.beta2) * delta * delta
    elif form == "standard":
        precond = np.sqrt(h.lam + state.ms_hat) / np.sqrt(h.lam + ms)
        new_theta = theta - gamma * precond * g
        delta = new_theta - theta
        ms_hat = h.beta2 * state.ms_hat + (1.0 - h.beta2) * delta * delta
    else:
        raise ControlError(
            f"adadelta form must be one of {sorted(VALID_ADADELTA_FORMS)}, got '{form}'"
        )
    return StepResult(new_theta, replace(state, ms=ms, ms_hat=ms_hat, n=state.n + 1), precond)


def base_step_for(name: str, adadelta_form: str = "lagged") -> BaseStep:
    if name == "adam":
        return adam_step
    if name == "rmsprop":
        return rmsprop_step
    if name == "adadelta":
        return partial(adadelta_step, form=adadelta_form)
    raise ControlError(f"optimizer must be one of {sorted(VALID_OPTIMIZERS)}, got '{name}'")


# ---------------------------------------------------------------------------
# Langevin noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerMask:
    langevin_param_indices: np.ndarray

    def __contains__(self, index: int) -> bool:
        return bool(np.isin(index, self.langevin_param_indices))

    def __len__(self) -> int:
        return int(self.langevin_param_indices.size)


def layer_mask(registry: LayerRegistry, p_percent: float) -> LayerMask:
    """Union of the parameter ranges of the first ``p`` percent of layers.

    ``p = 100`` selects every parameter, including trainables outside the
    networks.
    """
    if not 0.0 <= p_percent <= 100.0:
        raise ControlError(f"p_percent must be in [0, 100], got {p_percent}")
    if p_percent >= 100.0:
        return LayerMask(np.arange(registry.size))
    count = math.ceil(round(p_percent * registry.total_layers / 100.0, 9))
    chosen = registry.entries[:count]
    if not chosen:
        return LayerMask(np.zeros(0, dtype=np.int64))
    indices = np.concatenate([np.arange(e.start, e.stop) for e in chosen])
    return LayerMask(indices)


def _gaussian(precond: np.ndarray, gamma: float, sigma: float, z: np.ndarray) -> np.ndarray:
    return sigma * math.sqrt(gamma) * np.sqrt(precond) * z


def langevin_wrap(
    base_step: BaseStep,
    state: OptimizerState,
    theta: np.ndarray,
    g: np.ndarray,
    gamma: float,
    sigma: float,
    rng: np.random.Generator,
) -> StepResult:
    """Base update plus ``sigma * sqrt(gamma) * N(0, P)``; draws len(theta) normals."""
    if sigma < 0:
        raise ControlError(f"sigma must be >= 0, got {sigma}")
    result = base_step(state, theta, g, gamma)
    z = rng.standard_normal(theta.size)
    if sigma == 0.0:
        return result
    noise = _gaussian(result.precond, gamma, sigma, z)
    return result._replace(theta=result.theta + noise)


def layer_langevin_step(
    base_step: BaseStep,
    mask: LayerMask,
    state: OptimizerState,
    theta: np.ndarray,
    g: np.ndarray,
    gamma: float,
    sigma: float,
    rng: np.random.Generator,
) -> StepResult:
    """Langevin step restricted to the masked coordinates.

    The full len(theta) normals are drawn either way so masked and unmasked
    runs stay aligned on the same noise stream.
    """
    if sigma < 0:
        raise ControlError(f"sigma must be >= 0, got {sigma}")
    result = base_step(state, theta, g, gamma)
    z = rng.standard_normal(theta.size)
    if sigma == 0.0 or len(mask) == 0:
        return result
    idx = mask.langevin_param_indices
    new_theta = result.theta.copy()
    new_theta[idx] += _gaussian(result.precond[idx], gamma, sigma, z[idx])
    return result._replace(theta=new_theta)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulePiece:
    start_epoch: int
    gamma: float
    sigma: float


@dataclass(frozen=True)
class Schedule:
    pieces: tuple[SchedulePiece, ...]

    def __post_init__(self) -> None:
        if not self.pieces:
            raise ControlError("A schedule needs at least one piece")
        if self.pieces[0].start_epoch != 0:
            raise ControlError(
                f"The first schedule piece must start at epoch 0, got {self.pieces[0].start_epoch}"
            )
        starts = [p.start_epoch for p in self.pieces]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ControlError(f"Schedule start epochs must be strictly increasing, got {starts}")
        for p in self.pieces:
            if not p.gamma > 0:
                raise ControlError(f"Schedule step size must be > 0, got {p.gamma}")
            if not p.sigma >= 0:
                raise ControlError(f"Schedule noise level must be >= 0, got {p.sigma}")

    def __str__(self) -> str:
        return format_schedule(self)


def schedule_eval(schedule: Schedule, epoch: int) -> tuple[float, float]:
    """(gamma, sigma) of the last piece starting at or before ``epoch``."""
    if epoch < 0:
        raise ControlError(f"epoch must be >= 0, got {epoch}")
    current = schedule.pieces[0]
    for piece in schedule.pieces:
        if piece.start_epoch <= epoch:
            current = piece
        else:
            break
    return current.gamma, current.sigma


_PIECE_RE = re.compile(r"^\s*([^,@\s]+)\s*,\s*([^,@\s]+)\s*@\s*([^,@\s]+)\s*$")


def parse_schedule(text: str) -> Schedule:
    """Parse ``"gamma,sigma@epoch;..."``, e.g. ``"2e-3,1e-3@0;2e-4,0@40"``."""
    pieces: list[SchedulePiece] = []
    for token in text.split(";"):
        if not token.strip():
            continue
        m = _PIECE_RE.match(token)
        if not m:
            raise ControlError(f"Malformed schedule piece '{token.strip()}' (expected g,s@epoch)")
        try:
            gamma, sigma, start = float(m.group(1)), float(m.group(2)), int(m.group(3))
        except ValueError:
            raise ControlError(f"Malformed schedule piece '{token.strip()}' (expected g,s@epoch)")
        pieces.append(SchedulePiece(start, gamma, sigma))
    return Schedule(tuple(pieces))


def format_schedule(schedule: Schedule) -> str:
    """Inverse of :func:`parse_schedule`; floats are written at full precision."""
    return ";".join(f"{p.gamma!r},{p.sigma!r}@{p.start_epoch}" for p in schedule.pieces)


# ---------------------------------------------------------------------------
# Stateful driver
# ---------------------------------------------------------------------------


class Optimizer:
    """One training run's optimizer: base rule, Langevin variant and noise stream."""

    def __init__(
        self,
        name: str,
        size: int,
        *,
        variant: str = "base",
        hyper: Hyper | None = None,
        registry: LayerRegistry | None = None,
        p_percent: float = 100.0,
        noise_seed: int = 0,
        adadelta_form: str = "lagged",
    ) -> None:
        if variant not in VALID_VARIANTS:
            raise ControlError(f"variant must be one of {sorted(VALID_VARIANTS)}, got '{variant}'")
        self.name = name
        self.variant = variant
        self.base_step = base_step_for(name, adadelta_form)
        self.state = OptimizerState.fresh(size, hyper or DEFAULT_HYPER[name])
        self.rng = sequential_generator(noise_seed)
        self.mask: LayerMask | None = None
        if variant == "layer_langevin":
            if registry is None:
                raise ControlError("Layer Langevin needs the layer registry")
            self.mask = layer_mask(registry, p_percent)
            log.debug(
                "Layer Langevin %.4g%%: %d of %d parameters noised",
                p_percent,
                len(self.mask),
                size,
            )

    def step(self, theta: np.ndarray, g: np.ndarray, gamma: float, sigma: float) -> np.ndarray:
        if self.variant == "base":
            result = self.base_step(self.state, theta, g, gamma)
        elif self.variant == "langevin":
            result = langevin_wrap(self.base_step, self.state, theta, g, gamma, sigma, self.rng)
        else:
            assert self.mask is not None
            result = layer_langevin_step(
                self.base_step, self.mask, self.state, theta, g, gamma, sigma, self.rng
            )
        self.state = result.state
        return result.theta
