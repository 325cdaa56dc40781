"""Deep hedging of a call basket on independent Heston models.

Each model contributes two tradables: the spot ``S1`` and a variance swap
``S2 = ∫V + L(t, V)``.  The hedge pays proportional transaction costs, is
liquidated at maturity and is scored with the CVaR-type objective
``w + ℓ(Z - gains + costs - w)`` where ``ℓ(x) = max(x, 0) / (1 - α)`` and the
level ``w`` is trained together with the networks.

The simulated state is ``(S1, V, ∫V)``; it does not depend on the controls,
so the Heston path is recorded on the tape as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from langevin_control import ControlError, DivergenceError
from langevin_control.envs.params import broadcast_fields, params_to_dict, require_positive
from langevin_control.nets import ParamVector
from langevin_control.sim import Environment, Step, TrajectoryBatch
from langevin_control.tape import Tape, Var

log = logging.getLogger(__name__)

SWAP_FORMS = {"expectation", "flipped"}


@dataclass(frozen=True, eq=False)
class HestonParams:
    models: int = 5
    T: float = 1.0
    a: np.ndarray = field(default_factory=lambda: np.ones(5))
    b: np.ndarray = field(default_factory=lambda: np.full(5, 0.04))
    eta: np.ndarray = field(default_factory=lambda: np.full(5, 2.0))
    rho: np.ndarray = field(default_factory=lambda: np.full(5, -0.7))
    s0: np.ndarray = field(default_factory=lambda: np.ones(5))
    v0: np.ndarray = field(default_factory=lambda: np.full(5, 0.1))
    strike: np.ndarray = field(default_factory=lambda: np.ones(5))
    c_tr: np.ndarray = field(default_factory=lambda: np.full(10, 5e-4))
    alpha: float = 0.9
    swap_form: str = "expectation"

    def __post_init__(self) -> None:
        d = self.models
        if d < 1:
            raise ControlError(f"models must be >= 1, got {d}")
        broadcast_fields(self, d, ("a", "b", "eta", "rho", "s0", "v0", "strike"))
        broadcast_fields(self, 2 * d, ("c_tr",))
        for name in ("a", "b", "eta", "rho", "s0", "v0", "strike"):
            if getattr(self, name).shape != (d,):
                raise ControlError(
                    f"hedging {name} must have {d} components, got {getattr(self, name).shape}"
                )
        if self.c_tr.shape != (2 * d,):
            raise ControlError(f"hedging c_tr must have {2 * d} components, got {self.c_tr.shape}")
        require_positive("hedging", a=self.a, b=self.b, eta=self.eta, s0=self.s0, v0=self.v0)
        if np.any(np.abs(self.rho) > 1):
            raise ControlError(f"hedging rho must lie in [-1, 1], got {self.rho}")
        if np.any(self.c_tr < 0):
            raise ControlError("hedging c_tr must be >= 0")
        if not 0 < self.alpha < 1:
            raise ControlError(f"hedging alpha must lie in (0, 1), got {self.alpha}")
        if self.swap_form not in SWAP_FORMS:
            raise ControlError(
                f"swap_form must be one of {sorted(SWAP_FORMS)}, got '{self.swap_form}'"
            )
        if not self.T > 0:
            raise ControlError(f"hedging T must be > 0, got {self.T}")


def _split(x: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return x[..., :d], x[..., d : 2 * d], x[..., 2 * d : 3 * d]


def heston_drift(x: np.ndarray, params: HestonParams) -> np.ndarray:
    """Full-truncation drift of ``(S1, V, ∫V)``."""
    s1, v, _ = _split(np.asarray(x, dtype=np.float64), params.models)
    v_plus = np.maximum(v, 0.0)
    return np.concatenate([np.zeros_like(s1), params.a * (params.b - v_plus), v_plus], axis=-1)


def heston_diffusion(
    x: np.ndarray, xi_w: np.ndarray, xi_perp: np.ndarray, params: HestonParams
) -> np.ndarray:
    """Full-truncation diffusion applied to one draw of the two noises."""
    s1, v, _ = _split(np.asarray(x, dtype=np.float64), params.models)
    vol = np.sqrt(np.maximum(v, 0.0))
    xi_b = params.rho * xi_w + np.sqrt(1.0 - params.rho**2) * xi_perp
    return np.concatenate([s1 * vol * xi_b, params.eta * vol * xi_w, np.zeros_like(s1)], axis=-1)


def heston_step(
    x: np.ndarray, xi_w: np.ndarray, xi_perp: np.ndarray, h: float, params: HestonParams
) -> np.ndarray:
    """One Euler step of the spot, the variance and its running integral."""
    if not h > 0:
        raise ControlError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    noise = heston_diffusion(x, xi_w, xi_perp, params) * np.sqrt(h)
    return x + heston_drift(x, params) * h + noise


def variance_swap(t: float, v: np.ndarray, params: HestonParams) -> np.ndarray:
    """Remaining expected variance ``L(t, v)`` over ``[t, T]``.

    The ``flipped`` form flips the sign of the exponent.
    """
    tau = params.T - t
    sign = -1.0 if params.swap_form == "expectation" else 1.0
    return (np.asarray(v) - params.b) / params.a * (1.0 - np.exp(sign * params.a * tau)) + (
        params.b * tau
    )


def tradables(t: float, x: np.ndarray, params: HestonParams) -> np.ndarray:
    """Prices ``(S1, S2)`` of the hedging instruments at time ``t``."""
    s1, v, int_v = _split(np.asarray(x, dtype=np.float64), params.models)
    return np.concatenate([s1, int_v + variance_swap(t, v, params)], axis=-1)


def cvar_loss(x: np.ndarray | float, alpha: float) -> np.ndarray:
    return np.maximum(x, 0.0) / (1.0 - alpha)


def basket_payoff(s1: np.ndarray, params: HestonParams) -> np.ndarray:
    """``Z = Σ (S1 - K)+`` over the models."""
    return np.sum(np.maximum(np.asarray(s1) - params.strike, 0.0), axis=-1)


def risk_level_scan(losses: np.ndarray, levels: np.ndarray, alpha: float) -> np.ndarray:
    """``w + mean ℓ(X - w)`` for each candidate level ``w`` at fixed per-sample losses."""
    losses = np.asarray(losses, dtype=np.float64)
    return np.array([w + np.mean(cvar_loss(losses - w, alpha)) for w in np.asarray(levels)])


# ---------------------------------------------------------------------------
# Tape-level objective
# ---------------------------------------------------------------------------


def _trading_cost(
    tape: Tape,
    s_k: np.ndarray,
    s_next: np.ndarray,
    u: Var,
    u_prev: Var | np.ndarray,
    c: np.ndarray,
) -> Var:
    """Transaction cost of moving to ``u`` minus the gain of holding it over the step."""
    return tape.dot(c * s_k, tape.abs(u - u_prev)) - tape.dot(u, s_next - s_k)


def _risk_objective(
    tape: Tape,
    x_last: np.ndarray,
    u_last: Var,
    running_total: Var,
    w: Var,
    params: HestonParams,
) -> Var:
    s_final = tradables(params.T, x_last, params)
    liquidation = tape.dot(params.c_tr * s_final, tape.abs(u_last))
    z = basket_payoff(s_final[..., : params.models], params)
    loss = z + running_total + liquidation - w
    return w + tape.positive_part(loss) * (1.0 / (1.0 - params.alpha))


def hedging_objective(trajectory: TrajectoryBatch, w: float, params: HestonParams) -> float:
    """Batch mean of ``w + ℓ(Z - gains + costs - w)`` along recorded paths."""
    states, controls = trajectory.states, trajectory.controls
    n = controls.shape[1]
    h = params.T / n
    tape = Tape(grad_enabled=False)
    total: Var = tape.constant(np.zeros(states.shape[0]))
    prev: Var | np.ndarray = np.zeros_like(controls[:, 0])
    for k in range(n):
        s_k = tradables(k * params.T / n, states[:, k], params)
        s_next = tradables((k + 1) * params.T / n, states[:, k + 1], params)
        u = tape.constant(controls[:, k])
        total = total + _trading_cost(tape, s_k, s_next, u, prev, params.c_tr)
        prev = u
    log.debug("hedging objective over %d paths, h=%g", states.shape[0], h)
    u_last = tape.constant(controls[:, -1])
    objective = _risk_objective(tape, states[:, -1], u_last, total, tape.constant(w), params)
    return float(np.mean(objective.value))


class HedgingEnv(Environment):
    name = "hedging"
    output_head = "relu_nonneg"
    extra_params = {"w": 1}

    def __init__(self, params: HestonParams | None = None) -> None:
        self.params = params or HestonParams()
        d = self.params.models
        self.state_dim = 3 * d
        self.noise_dim = 2 * d
        self.control_dim = 2 * d
        self.horizon = self.params.T

    @property
    def feature_dim(self) -> int:
        return 2 * self.params.models + self.control_dim

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        return np.concatenate([p.s0, p.v0, np.zeros(p.models)])

    def features(self, tape: Tape, k: int, x: Var, u_prev: Var | None) -> Var:
        """``(log S1, V, u_prev)`` with ``u_prev = 0`` before the first trade."""
        d = self.params.models
        s1 = x.value[..., :d]
        if np.any(s1 <= 0):
            raise DivergenceError("Non-positive spot in hedging rollout", step=k)
        if u_prev is None:
            u_prev = tape.constant(np.zeros((*x.shape[:-1], self.control_dim)))
        return tape.concat(np.log(s1), x[d : 2 * d], u_prev)

    def drift(self, tape: Tape, x: Var, u: Var) -> Var:
        return tape.constant(heston_drift(x.value, self.params))

    def diffusion(self, tape: Tape, x: Var, u: Var, xi: np.ndarray) -> Var:
        d = self.params.models
        return tape.constant(heston_diffusion(x.value, xi[..., :d], xi[..., d:], self.params))

    def running_cost(self, tape: Tape, step: Step) -> Var:
        p = self.params
        s_k = tradables(step.t_k, step.x.value, p)
        s_next = tradables(step.t_next, step.x_next.value, p)
        prev = np.zeros(step.u.shape) if step.u_prev is None else step.u_prev
        return _trading_cost(tape, s_k, s_next, step.u, prev, p.c_tr)

    def terminal(
        self,
        tape: Tape,
        x_last: Var,
        u_last: Var,
        running_total: Var,
        params: ParamVector,
    ) -> Var:
        w = tape.parameter(*params.registry.extras["w"])
        return _risk_objective(tape, x_last.value, u_last, running_total, w, self.params)

    def describe(self) -> dict[str, object]:
        return {**super().describe(), **params_to_dict(self.params)}
