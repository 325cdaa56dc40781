"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation of one rollout as a :class:`Node` in
creation order.  Inputs of a node always have smaller ids, so the backward
sweep is a single pass over the node list in decreasing id order.

Values are numpy arrays.  Where a batch axis exists it is the leading one;
``sum`` and ``dot`` reduce the last axis, ``mean`` reduces everything.
Elementwise operations follow numpy broadcasting and the backward sweep sums
adjoints back to the operand shapes.

Typical use::

    tape = Tape(theta)
    w = tape.parameter(0, 6, (2, 3))
    y = tape.relu(tape.matvec(w, tape.constant(x)))
    loss = tape.mean(tape.sum(y))
    grad = tape.backward(loss)
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np

from langevin_control import ControlError

log = logging.getLogger(__name__)

OP_KINDS = frozenset(
    {
        "input",
        "constant",
        "add",
        "sub",
        "schur_mul",
        "scalar_mul",
        "matvec",
        "concat",
        "slice",
        "sum",
        "mean",
        "relu",
        "sigmoid",
        "exp",
        "log",
        "square",
        "abs",
        "positive_part",
        "min_const",
        "dot",
    }
)

Operand: TypeAlias = "Var | np.ndarray | float"


@dataclass(eq=False)
class Node:
    id: int
    op_kind: str
    input_ids: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    attrs: dict = field(default_factory=dict)
    adjoint: np.ndarray | None = None


class Var:
    """Handle on a tape node with arithmetic operators."""

    __slots__ = ("tape", "id")
    # numpy defers arithmetic with arrays on the left to the reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.id].requires_grad

    def __repr__(self) -> str:
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, op={node.op_kind}, shape={node.value.shape})"

    def __add__(self, other: Operand) -> Var:
        return self.tape.add(self, other)

    def __radd__(self, other: Operand) -> Var:
        return self.tape.add(other, self)

    def __sub__(self, other: Operand) -> Var:
        return self.tape.sub(self, other)

    def __rsub__(self, other: Operand) -> Var:
        return self.tape.sub(other, self)

    def __mul__(self, other: Operand) -> Var:
        if isinstance(other, int | float):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, other)

    def __rmul__(self, other: Operand) -> Var:
        return self.__mul__(other)

    def __truediv__(self, other: float) -> Var:
        if not isinstance(other, int | float):
            raise TypeError("Var can only be divided by a Python scalar")
        return self.tape.scale(self, 1.0 / float(other))

    def __neg__(self) -> Var:
        return self.tape.scale(self, -1.0)

    def __getitem__(self, index: slice) -> Var:
        if not isinstance(index, slice) or index.step not in (None, 1):
            raise TypeError("Var supports only contiguous slices of the last axis")
        size = self.shape[-1]
        start, stop, _ = index.indices(size)
        return self.tape.slice(self, start, stop)


# ---------------------------------------------------------------------------
# Forward and backward rules
# ---------------------------------------------------------------------------


def _matvec_forward(vals: list[np.ndarray], attrs: dict) -> np.ndarray:
    w, x = vals
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ValueError("matvec needs a matrix and vectors of matching width")
    return x @ w.T


def _concat_forward(vals: list[np.ndarray], attrs: dict) -> np.ndarray:
    return np.concatenate(vals, axis=-1)


def _slice_forward(vals: list[np.ndarray], attrs: dict) -> np.ndarray:
    (x,) = vals
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= x.shape[-1]:
        raise ValueError(f"slice [{start}:{stop}] out of range for width {x.shape[-1]}")
    return x[..., start:stop]


def _dot_forward(vals: list[np.ndarray], attrs: dict) -> np.ndarray:
    a, b = vals
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("dot needs operands of the same width")
    return np.sum(a * b, axis=-1)


_FORWARD: dict[str, Callable[[list[np.ndarray], dict], np.ndarray]] = {
    "add": lambda v, a: v[0] + v[1],
    "sub": lambda v, a: v[0] - v[1],
    "schur_mul": lambda v, a: v[0] * v[1],
    "scalar_mul": lambda v, a: v[0] * a["c"],
    "matvec": _matvec_forward,
    "concat": _concat_forward,
    "slice": _slice_forward,
    "sum": lambda v, a: np.sum(v[0], axis=-1),
    "mean": lambda v, a: np.asarray(np.mean(v[0])),
    "relu": lambda v, a: np.maximum(v[0], 0.0),
    "positive_part": lambda v, a: np.maximum(v[0], 0.0),
    "sigmoid": lambda v, a: 1.0 / (1.0 + np.exp(-v[0])),
    "exp": lambda v, a: np.exp(v[0]),
    "log": lambda v, a: np.log(v[0]),
    "square": lambda v, a: v[0] * v[0],
    "abs": lambda v, a: np.abs(v[0]),
    "min_const": lambda v, a: np.minimum(v[0], a["c"]),
    "dot": _dot_forward,
}


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _backward_rule(node: Node, vals: list[np.ndarray], adj: np.ndarray) -> list[np.ndarray]:
    """Return the adjoint contribution for every input of ``node``."""
    kind = node.op_kind
    out = node.value
    if kind == "add":
        return [adj, adj]
    if kind == "sub":
        return [adj, -adj]
    if kind == "schur_mul":
        return [adj * vals[1], adj * vals[0]]
    if kind == "scalar_mul":
        return [adj * node.attrs["c"]]
    if kind == "matvec":
        w, x = vals
        gw = np.outer(adj, x) if x.ndim == 1 else adj.T @ x
        return [gw, adj @ w]
    if kind == "concat":
        widths = np.cumsum([v.shape[-1] for v in vals])[:-1]
        return list(np.split(adj, widths, axis=-1))
    if kind == "slice":
        grad = np.zeros_like(vals[0])
        grad[..., node.attrs["start"] : node.attrs["stop"]] = adj
        return [grad]
    if kind == "sum":
        return [np.broadcast_to(adj[..., None], vals[0].shape)]
    if kind == "mean":
        return [np.full(vals[0].shape, adj / vals[0].size)]
    if kind in ("relu", "positive_part"):
        return [adj * (vals[0] > 0.0)]
    if kind == "sigmoid":
        return [adj * out * (1.0 - out)]
    if kind == "exp":
        return [adj * out]
    if kind == "log":
        return [adj / vals[0]]
    if kind == "square":
        return [adj * 2.0 * vals[0]]
    if kind == "abs":
        return [adj * np.sign(vals[0])]
    if kind == "min_const":
        return [adj * (vals[0] < node.attrs["c"])]
    if kind == "dot":
        a, b = vals
        return [adj[..., None] * b, adj[..., None] * a]
    raise ControlError(f"No backward rule for op '{kind}'")


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Tape:
    """Record of one computation, differentiable with respect to ``theta``.

    With ``grad_enabled=False`` parameters are recorded as plain inputs and
    :meth:`backward` is unavailable; this is the evaluation mode.
    """

    def __init__(self, theta: np.ndarray | None = None, *, grad_enabled: bool = True) -> None:
        self.theta = (
            np.zeros(0) if theta is None else np.asarray(theta, dtype=np.float64).ravel()
        )
        self.grad_enabled = grad_enabled
        self.nodes: list[Node] = []
        self.parameter_node_ids: list[int] = []
        self._param_cache: dict[tuple[int, int, tuple[int, ...]], int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(
        self,
        op_kind: str,
        input_ids: tuple[int, ...],
        value: np.ndarray,
        requires_grad: bool,
        attrs: dict | None = None,
    ) -> int:
        node_id = len(self.nodes)
        self.nodes.append(
            Node(
                id=node_id,
                op_kind=op_kind,
                input_ids=input_ids,
                value=value,
                requires_grad=requires_grad,
                attrs=attrs or {},
            )
        )
        return node_id

    def lift(self, x: Var | np.ndarray | float) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ControlError("Cannot mix nodes from different tapes")
            return x
        return self.constant(x)

    # -- leaves -------------------------------------------------------------

    def constant(self, value: np.ndarray | float) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        return Var(self, self._append("constant", (), arr, False))

    def parameter(self, start: int, stop: int, shape: tuple[int, ...] | None = None) -> Var:
        """Input node viewing ``theta[start:stop]``; repeated calls share the node."""
        if not 0 <= start <= stop <= self.theta.size:
            raise ControlError(
                f"Parameter range [{start}:{stop}] outside a vector of length {self.theta.size}"
            )
        shape = (stop - start,) if shape is None else tuple(shape)
        key = (start, stop, shape)
        if key in self._param_cache:
            return Var(self, self._param_cache[key])
        value = self.theta[start:stop].reshape(shape)
        node_id = self._append(
            "input", (), value, self.grad_enabled, {"start": start, "stop": stop}
        )
        if self.grad_enabled:
            self.parameter_node_ids.append(node_id)
        self._param_cache[key] = node_id
        return Var(self, node_id)

    # -- generic construction -------------------------------------------------

    def forward(self, op_kind: str, input_ids: tuple[int, ...] | list[int], **attrs) -> int:
        """Append one node computed from existing nodes and return its id."""
        if op_kind not in OP_KINDS or op_kind in ("input", "constant"):
            raise ControlError(f"Unknown or non-computable op '{op_kind}'")
        ids = tuple(int(i) for i in input_ids)
        for i in ids:
            if not 0 <= i < len(self.nodes):
                raise ControlError(f"{op_kind}: input node {i} does not exist")
        vals = [self.nodes[i].value for i in ids]
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                value = np.asarray(_FORWARD[op_kind](vals, attrs), dtype=np.float64)
        except ValueError as exc:
            shapes = ", ".join(str(v.shape) for v in vals)
            raise ControlError(f"{op_kind}: incompatible shapes {shapes}") from exc
        requires_grad = any(self.nodes[i].requires_grad for i in ids)
        return self._append(op_kind, ids, value, requires_grad, attrs)

    def _op(self, op_kind: str, *inputs: Var | np.ndarray | float, **attrs) -> Var:
        ids = tuple(self.lift(x).id for x in inputs)
        return Var(self, self.forward(op_kind, ids, **attrs))

    # -- operations ---------------------------------------------------------

    def add(self, a, b) -> Var:
        return self._op("add", a, b)

    def sub(self, a, b) -> Var:
        return self._op("sub", a, b)

    def mul(self, a, b) -> Var:
        return self._op("schur_mul", a, b)

    def scale(self, a, c: float) -> Var:
        return self._op("scalar_mul", a, c=float(c))

    def matvec(self, w, x) -> Var:
        return self._op("matvec", w, x)

    def concat(self, *xs) -> Var:
        return self._op("concat", *xs)

    def slice(self, x, start: int, stop: int) -> Var:
        return self._op("slice", x, start=int(start), stop=int(stop))

    def sum(self, x) -> Var:
        return self._op("sum", x)

    def mean(self, x) -> Var:
        return self._op("mean", x)

    def relu(self, x) -> Var:
        return self._op("relu", x)

    def positive_part(self, x) -> Var:
        return self._op("positive_part", x)

    def sigmoid(self, x) -> Var:
        return self._op("sigmoid", x)

    def exp(self, x) -> Var:
        return self._op("exp", x)

    def log(self, x) -> Var:
        return self._op("log", x)

    def square(self, x) -> Var:
        return self._op("square", x)

    def abs(self, x) -> Var:
        return self._op("abs", x)

    def min_const(self, x, c: float) -> Var:
        return self._op("min_const", x, c=float(c))

    def dot(self, a, b) -> Var:
        return self._op("dot", a, b)

    def minimum(self, a, b) -> Var:
        """``min(a, b)`` written as ``b - relu(b - a)``; ties send the gradient to ``b``."""
        return self.sub(b, self.relu(self.sub(b, a)))

    # -- differentiation ----------------------------------------------------

    def backward(self, root: Var | int) -> np.ndarray:
        """Gradient of the scalar ``root`` with respect to ``theta``."""
        if not self.grad_enabled:
            raise ControlError("backward() needs a tape built with grad_enabled=True")
        root_id = root.id if isinstance(root, Var) else int(root)
        root_node = self.nodes[root_id]
        if root_node.value.size != 1:
            raise ControlError(
                f"backward() needs a scalar root, node {root_id} has shape {root_node.value.shape}"
            )
        for node in self.nodes:
            node.adjoint = None
        grad = np.zeros_like(self.theta)
        root_node.adjoint = np.ones_like(root_node.value)

        for node_id in range(root_id, -1, -1):
            node = self.nodes[node_id]
            adj = node.adjoint
            if adj is None or not node.requires_grad:
                continue
            if node.op_kind == "input":
                grad[node.attrs["start"] : node.attrs["stop"]] += adj.ravel()
                continue
            vals = [self.nodes[i].value for i in node.input_ids]
            contributions = _backward_rule(node, vals, adj)
            for input_id, contrib in zip(node.input_ids, contributions):
                target = self.nodes[input_id]
                if not target.requires_grad:
                    continue
                contrib = _unbroadcast(np.asarray(contrib), target.value.shape)
                if target.adjoint is None:
                    target.adjoint = contrib.copy()
                else:
                    target.adjoint = target.adjoint + contrib
        return grad


def evaluate(fn: Callable[..., Var], *arrays: np.ndarray | float) -> np.ndarray:
    """Run a tape-level function on plain arrays and return its value."""
    tape = Tape(grad_enabled=False)
    return fn(tape, *(tape.constant(a) for a in arrays)).value.copy()


def value_and_grad(f: Callable[[Tape], Var], theta: np.ndarray) -> tuple[float, np.ndarray]:
    """Evaluate ``f`` on a fresh tape over ``theta`` and differentiate it."""
    tape = Tape(theta)
    root = f(tape)
    return float(root.value), tape.backward(root)


def finite_diff_check(
    f: Callable[[Tape], Var],
    theta: np.ndarray,
    step: float = 1e-5,
    *,
    floor: float = 1e-12,
    relative_floor: float = 0.0,
) -> float:
    """Largest relative gap between tape and central-difference gradients.

    ``f`` builds a scalar on the tape it is given; parameters are read through
    :meth:`Tape.parameter`.  The gap of coordinate i is
    ``|fd_i - g_i| / (|g_i| + floor)``, where the floor is raised to
    ``relative_floor * max|g|`` when that is larger.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    _, grad = value_and_grad(f, theta)
    if grad.size:
        floor = max(floor, relative_floor * float(np.max(np.abs(grad))))
    worst = 0.0
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += step
        minus[i] -= step
        f_plus = float(f(Tape(plus, grad_enabled=False)).value)
        f_minus = float(f(Tape(minus, grad_enabled=False)).value)
        fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(fd - grad[i]) / (abs(grad[i]) + floor)
        if np.isnan(err):
            return float("nan")
        worst = max(worst, err)
    log.debug("Finite-difference check over %d coordinates: %.3e", theta.size, worst)
    return worst
