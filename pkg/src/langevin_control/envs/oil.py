"""Oil extraction, storage and sale under a Black-Scholes price.

State ``(P, E, S)``: price, cumulated extraction and current storage.  The
control ``q = (q^v, q^s, q^{v,s})`` sells extracted oil, stores extracted oil
and sells from storage.  The constraints

    q >= 0,  q^v + q^s <= K0,  q^{v,s} <= q^S,  0 <= S (<= Q^S)

are built into the output head out of relu and min compositions, and asserted
again on every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from langevin_control import ConstraintViolation, ControlError, DivergenceError
from langevin_control.envs.params import params_to_dict
from langevin_control.sim import Environment, Step
from langevin_control.tape import Tape, Var, evaluate

log = logging.getLogger(__name__)

UTILITIES = {"identity", "cara"}
CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class OilParams:
    T: float = 1.0
    mu: float = 0.01
    eta: float = 0.2
    rho: float = 0.01
    epsilon: float = 0.0
    K0: float = 5.0
    xi_e: float = 1e-2
    xi_s: float = 5e-3
    q_s: float = 10.0
    storage_cap: float = math.inf
    P0: float = 1.0
    utility: str = "identity"
    risk_aversion: float = 1.0

    def __post_init__(self) -> None:
        if not self.K0 > 0 or not self.q_s > 0:
            raise ControlError(f"oil K0 and q_s must be > 0, got {self.K0}, {self.q_s}")
        if not 0 <= self.epsilon < 1:
            raise ControlError(f"oil epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.P0 > 0:
            raise ControlError(f"oil P0 must be > 0, got {self.P0}")
        if not self.storage_cap > 0:
            raise ControlError(f"oil storage_cap must be > 0, got {self.storage_cap}")
        if self.utility not in UTILITIES:
            raise ControlError(
                f"oil utility must be one of {sorted(UTILITIES)}, got '{self.utility}'"
            )
        if self.utility == "cara" and not self.risk_aversion > 0:
            raise ControlError(f"oil risk_aversion must be > 0, got {self.risk_aversion}")
        if not self.T > 0:
            raise ControlError(f"oil T must be > 0, got {self.T}")


# ---------------------------------------------------------------------------
# Tape-level model
# ---------------------------------------------------------------------------


def _constrained_head(tape: Tape, raw: Var, storage: Var, h: float, p: OilParams) -> Var:
    a = tape.relu(raw)
    q_v = tape.min_const(a[0:1], p.K0)
    q_s = tape.minimum(a[1:2], p.K0 - q_v)
    if math.isfinite(p.storage_cap):
        q_s = tape.minimum(q_s, (p.storage_cap - storage) / h)
    q_vs = tape.minimum(tape.min_const(a[2:3], p.q_s), storage / h + q_s)
    return tape.concat(q_v, q_s, q_vs)


def _utility(tape: Tape, x: Var, p: OilParams) -> Var:
    if p.utility == "identity":
        return x
    gamma = p.risk_aversion
    return (1.0 - tape.exp(x * -gamma)) / gamma


def _reward_cost(tape: Tape, t_k: float, x: Var, q: Var, h: float, p: OilParams) -> Var:
    """``-h e^{-ρ t} U(profit)`` at the left endpoint of the step."""
    price, extracted, storage = x[0:1], x[1:2], x[2:3]
    q_v, q_s, q_vs = q[0:1], q[1:2], q[2:3]
    sales = q_v * price + q_vs * price * (1.0 - p.epsilon)
    extraction = (q_v + q_s) * tape.exp(extracted * p.xi_e)
    storing = tape.exp(storage * p.xi_s) - 1.0
    profit = tape.sum(sales - extraction - storing)
    return _utility(tape, profit, p) * (-h * math.exp(-p.rho * t_k))


def _drift(tape: Tape, x: Var, q: Var, p: OilParams) -> Var:
    q_v, q_s, q_vs = q[0:1], q[1:2], q[2:3]
    return tape.concat(x[0:1] * p.mu, q_v + q_s, q_s - q_vs)


def _noise(tape: Tape, x: Var, xi: np.ndarray, p: OilParams) -> Var:
    price_noise = x[0:1] * (p.eta * np.asarray(xi)[..., 0:1])
    zeros = tape.constant(np.zeros((*x.shape[:-1], 2)))
    return tape.concat(price_noise, zeros)


# ---------------------------------------------------------------------------
# Array-level operations
# ---------------------------------------------------------------------------


def oil_price_step(
    price: np.ndarray | float, xi: np.ndarray | float, h: float, p: OilParams
) -> np.ndarray:
    """``P (1 + μh + η sqrt(h) ξ)``; a non-positive result means the step broke down."""
    new = np.asarray(price, dtype=np.float64) * (1.0 + p.mu * h + p.eta * math.sqrt(h) * xi)
    if np.any(new <= 0):
        raise DivergenceError(f"Non-positive oil price after a step of h={h:g}")
    return new


def oil_constrained_head(
    raw: np.ndarray, storage: np.ndarray | float, h: float, p: OilParams
) -> np.ndarray:
    """Feasible ``(q^v, q^s, q^{v,s})`` from network pre-activations."""
    raw = np.asarray(raw, dtype=np.float64)
    storage = np.broadcast_to(np.asarray(storage, dtype=np.float64), raw.shape[:-1])[..., None]
    return evaluate(lambda t, r, s: _constrained_head(t, r, s, h, p), raw, storage)


def oil_running_reward(
    t_k: float, state: np.ndarray, q: np.ndarray, h: float, p: OilParams
) -> np.ndarray:
    """Running cost of one step (the negated discounted utility of its profit)."""
    return evaluate(lambda t, x, qv: _reward_cost(t, t_k, x, qv, h, p), state, q)


def constraint_violations(
    q: np.ndarray, storage_next: np.ndarray, p: OilParams, tol: float = CONSTRAINT_TOL
) -> list[str]:
    """Names of the operational bounds that ``q`` and the next storage level break."""
    q = np.asarray(q)
    broken = []
    if np.any(q < -tol):
        broken.append("q >= 0")
    if np.any(q[..., 0] + q[..., 1] > p.K0 + tol):
        broken.append("q^v + q^s <= K0")
    if np.any(q[..., 2] > p.q_s + tol):
        broken.append("q^{v,s} <= q^S")
    if np.any(storage_next < -tol):
        broken.append("S >= 0")
    if math.isfinite(p.storage_cap) and np.any(storage_next > p.storage_cap + tol):
        broken.append("S <= Q^S")
    return broken


class OilEnv(Environment):
    name = "oil"
    output_head = "oil_constrained"

    def __init__(self, params: OilParams | None = None) -> None:
        self.params = params or OilParams()
        self.state_dim = 3
        self.noise_dim = 1
        self.control_dim = 3
        self.horizon = self.params.T

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([self.params.P0, 0.0, 0.0])

    def control_head(self, tape: Tape, raw: Var, x: Var, h: float) -> Var:
        return _constrained_head(tape, raw, x[2:3], h, self.params)

    def drift(self, tape: Tape, x: Var, u: Var) -> Var:
        return _drift(tape, x, u, self.params)

    def diffusion(self, tape: Tape, x: Var, u: Var, xi: np.ndarray) -> Var:
        return _noise(tape, x, xi, self.params)

    def transition(self, tape: Tape, k: int, x: Var, u: Var, xi: np.ndarray, h: float) -> Var:
        x_next = super().transition(tape, k, x, u, xi, h)
        if np.any(x_next.value[..., 0] <= 0):
            raise DivergenceError(f"Non-positive oil price after a step of h={h:g}", step=k)
        return x_next

    def running_cost(self, tape: Tape, step: Step) -> Var:
        return _reward_cost(tape, step.t_k, step.x, step.u, step.h, self.params)

    def check_step(self, step: Step) -> None:
        broken = constraint_violations(step.u.value, step.x_next.value[..., 2], self.params)
        if broken:
            raise ConstraintViolation(f"Oil constraints violated: {', '.join(broken)}", step=step.k)

    def describe(self) -> dict[str, object]:
        return {**super().describe(), **params_to_dict(self.params)}
