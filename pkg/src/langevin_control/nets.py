"""Feedforward control networks and the flat parameter store.

All trainable weights of a run live in one flat float64 vector.  A
:class:`LayerRegistry` records where each affine layer sits in that vector, in
(network, depth) order, which is the ordering Layer Langevin counts layers in.
Trainables that are not network layers (for instance a risk level) are kept
in ``extras`` after the last network.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from langevin_control import ControlError
from langevin_control.streams import sequential_generator
from langevin_control.tape import Tape, Var

log = logging.getLogger(__name__)

SINGLE = "single"
PER_TIMESTEP = "per_timestep"
VALID_MODES = {SINGLE, PER_TIMESTEP}

VALID_HEADS = {"sigmoid_box", "relu_nonneg", "oil_constrained", "linear"}

Head = Callable[[Var], Var]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_head: str = "linear"
    head_bounds: tuple[float, float] | None = None  # (u_m, u_M) for sigmoid_box

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ControlError(f"Network dimensions must all be >= 1, got {dims}")
        if self.hidden_activation != "relu":
            raise ControlError(
                f"hidden_activation must be 'relu', got '{self.hidden_activation}'"
            )
        if self.output_head not in VALID_HEADS:
            raise ControlError(
                f"output_head must be one of {sorted(VALID_HEADS)}, got '{self.output_head}'"
            )
        if self.output_head == "sigmoid_box":
            if self.head_bounds is None or not self.head_bounds[0] < self.head_bounds[1]:
                raise ControlError(f"sigmoid_box needs bounds u_m < u_M, got {self.head_bounds}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every affine map, input side first."""
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(fan_out * fan_in + fan_out for fan_in, fan_out in self.layer_dims)


@dataclass(frozen=True)
class ControlParametrization:
    mode: str
    spec: MlpSpec
    num_timesteps: int
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in VALID_MODES:
            raise ControlError(f"mode must be one of {sorted(VALID_MODES)}, got '{self.mode}'")
        if self.num_timesteps < 1:
            raise ControlError(f"num_timesteps must be >= 1, got {self.num_timesteps}")
        if self.mode == SINGLE and self.spec.input_dim < 2:
            raise ControlError("A single network needs the time input plus at least one feature")

    @property
    def num_networks(self) -> int:
        return 1 if self.mode == SINGLE else self.num_timesteps

    @property
    def feature_dim(self) -> int:
        """Width of the state features, i.e. the input without the time slot."""
        return self.spec.input_dim - 1 if self.mode == SINGLE else self.spec.input_dim


def make_parametrization(
    mode: str,
    feature_dim: int,
    control_dim: int,
    num_timesteps: int,
    *,
    hidden_dims: tuple[int, ...] = (32, 32),
    output_head: str = "linear",
    head_bounds: tuple[float, float] | None = None,
    horizon: float = 1.0,
) -> ControlParametrization:
    """Build a parametrization, adding the time slot for a single network."""
    input_dim = feature_dim + 1 if mode == SINGLE else feature_dim
    spec = MlpSpec(
        input_dim=input_dim,
        hidden_dims=tuple(hidden_dims),
        output_dim=control_dim,
        output_head=output_head,
        head_bounds=head_bounds,
    )
    return ControlParametrization(mode, spec, num_timesteps, horizon)


@dataclass(frozen=True)
class LayerEntry:
    network: int
    layer: int
    start: int
    stop: int
    fan_in: int
    fan_out: int

    @property
    def weight_range(self) -> tuple[int, int]:
        return self.start, self.start + self.fan_in * self.fan_out

    @property
    def bias_range(self) -> tuple[int, int]:
        return self.start + self.fan_in * self.fan_out, self.stop


@dataclass(frozen=True)
class LayerRegistry:
    entries: tuple[LayerEntry, ...]
    extras: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def total_layers(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        stops = [e.stop for e in self.entries] + [stop for _, stop in self.extras.values()]
        return max(stops, default=0)

    def layers_of(self, network: int) -> list[LayerEntry]:
        return [e for e in self.entries if e.network == network]

    def network_range(self, network: int) -> tuple[int, int]:
        layers = self.layers_of(network)
        if not layers:
            raise ControlError(f"No network with index {network}")
        return layers[0].start, layers[-1].stop


@dataclass(frozen=True)
class ParamVector:
    data: np.ndarray
    registry: LayerRegistry

    def __post_init__(self) -> None:
        if self.data.ndim != 1 or self.data.size != self.registry.size:
            raise ControlError(
                f"Parameter vector of length {self.data.size} does not match "
                f"registry size {self.registry.size}"
            )

    def __len__(self) -> int:
        return int(self.data.size)

    def copy(self) -> ParamVector:
        return replace(self, data=self.data.copy())

    def with_data(self, data: np.ndarray) -> ParamVector:
        return replace(self, data=np.asarray(data, dtype=np.float64))

    def extra(self, name: str) -> np.ndarray:
        start, stop = self.registry.extras[name]
        return self.data[start:stop]


def build(
    parametrization: ControlParametrization,
    init_seed: int,
    extras: Mapping[str, int] | None = None,
) -> ParamVector:
    """Initialize every network and lay the weights out in registry order.

    Weights are drawn uniformly on ±sqrt(6 / (fan_in + fan_out)), biases and
    extras start at zero.
    """
    rng = sequential_generator(init_seed)
    spec = parametrization.spec
    chunks: list[np.ndarray] = []
    entries: list[LayerEntry] = []
    offset = 0
    for network in range(parametrization.num_networks):
        for layer, (fan_in, fan_out) in enumerate(spec.layer_dims):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            chunks.append(weights.ravel())
            chunks.append(np.zeros(fan_out))
            size = fan_out * fan_in + fan_out
            entries.append(LayerEntry(network, layer, offset, offset + size, fan_in, fan_out))
            offset += size
    extra_ranges: dict[str, tuple[int, int]] = {}
    for name, size in (extras or {}).items():
        chunks.append(np.zeros(size))
        extra_ranges[name] = (offset, offset + size)
        offset += size
    data = np.concatenate(chunks) if chunks else np.zeros(0)
    registry = LayerRegistry(tuple(entries), extra_ranges)
    log.debug(
        "Built %d network(s), %d layers, %d parameters",
        parametrization.num_networks,
        registry.total_layers,
        data.size,
    )
    return ParamVector(data, registry)


# ---------------------------------------------------------------------------
# Output heads
# ---------------------------------------------------------------------------


def sigmoid_box(tape: Tape, raw: Var, lower: float, upper: float) -> Var:
    """Map pre-activations into the open box (lower, upper)."""
    return lower + tape.sigmoid(raw) * (upper - lower)


def relu_nonneg(tape: Tape, raw: Var) -> Var:
    return tape.relu(raw)


def default_head(tape: Tape, spec: MlpSpec) -> Head:
    if spec.output_head == "linear":
        return lambda raw: raw
    if spec.output_head == "relu_nonneg":
        return lambda raw: relu_nonneg(tape, raw)
    if spec.output_head == "sigmoid_box":
        assert spec.head_bounds is not None
        lower, upper = spec.head_bounds
        return lambda raw: sigmoid_box(tape, raw, lower, upper)
    raise ControlError(f"Output head '{spec.output_head}' needs the environment to apply it")


def control_forward(
    tape: Tape,
    params: ParamVector,
    parametrization: ControlParametrization,
    k: int,
    t_k: float,
    features: Var,
    head: Head | None = None,
) -> Var:
    """Evaluate the control at step ``k`` on the tape.

    A single network sees ``(t_k / T, features)``; with one network per
    timestep, network ``k`` sees the features alone.  ``head`` replaces the
    output head named by the MlpSpec.
    """
    if not 0 <= k < parametrization.num_timesteps:
        raise ControlError(f"Step {k} outside [0, {parametrization.num_timesteps})")
    if features.shape[-1] != parametrization.feature_dim:
        raise ControlError(
            f"Control features have width {features.shape[-1]}, "
            f"network expects {parametrization.feature_dim}"
        )
    if parametrization.mode == SINGLE:
        batch_shape = features.shape[:-1]
        t_col = np.full((*batch_shape, 1), t_k / parametrization.horizon)
        x = tape.concat(t_col, features)
        network = 0
    else:
        x = features
        network = k

    layers = params.registry.layers_of(network)
    for i, entry in enumerate(layers):
        w = tape.parameter(*entry.weight_range, (entry.fan_out, entry.fan_in))
        b = tape.parameter(*entry.bias_range, (entry.fan_out,))
        x = tape.matvec(w, x) + b
        if i < len(layers) - 1:
            x = tape.relu(x)

    if head is None:
        head = default_head(tape, parametrization.spec)
    return head(x)
