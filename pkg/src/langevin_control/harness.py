"""Training protocol: epochs of scheduled optimizer steps with periodic evaluation.

One epoch is ``batches_per_epoch`` optimizer steps, each on a fresh batch of
``batch_size`` trajectories.  The untrained network is evaluated once before
training and again after every epoch, so ``epochs = E`` yields ``E + 1``
records.  Evaluation draws its own stream and never touches optimizer state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from langevin_control import ControlError, DivergenceError
from langevin_control.config import ExperimentConfig, dump_config
from langevin_control.envs import make_environment
from langevin_control.nets import ControlParametrization, ParamVector, build
from langevin_control.optim import Optimizer, schedule_eval
from langevin_control.sim import (
    Environment,
    RolloutConfig,
    TrajectoryBatch,
    draw_batch,
    loss_and_grad,
    parametrization_for,
    rollout,
)
from langevin_control.streams import EVAL, TRAIN, TRAJECTORY

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["time", "f", "f_plus", "f_minus"]
Z_95 = 1.96


@dataclass(frozen=True)
class RunRecord:
    epoch: int
    mean_J: float
    ci_half_width: float


@dataclass
class TrainingResult:
    records: list[RunRecord]
    params: ParamVector


def summarize(epoch: int, values: np.ndarray) -> RunRecord:
    """Mean and 95% normal half-width of a sample of per-trajectory objectives."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("Cannot summarize an empty sample")
    half = 0.0
    if values.size > 1:
        half = Z_95 * float(np.std(values, ddof=1)) / math.sqrt(values.size)
    return RunRecord(epoch, float(np.mean(values)), half)


def setup(config: ExperimentConfig) -> tuple[Environment, ControlParametrization]:
    env = make_environment(config.env, config.params)
    return env, parametrization_for(env, config.mode, config.N, config.hidden)


def initial_params(
    config: ExperimentConfig, env: Environment, parametrization: ControlParametrization
) -> ParamVector:
    return build(parametrization, config.seed_init, env.extra_params)


def evaluation_sample(
    params: ParamVector,
    env: Environment,
    parametrization: ControlParametrization,
    config: ExperimentConfig,
    epoch: int,
) -> np.ndarray:
    """Per-trajectory objectives of the evaluation sample for ``epoch``."""
    total = config.eval_samples
    values = []
    for start in range(0, total, config.batch_size):
        size = min(config.batch_size, total - start)
        rc = RolloutConfig(config.N, size, env.horizon)
        draws = draw_batch(env, rc, config.seed_data, EVAL, epoch, start=start)
        result = rollout(env, params, parametrization, rc, draws, grad=False)
        values.append(result.batch.per_sample_objective)
    return np.concatenate(values)


def evaluate(
    params: ParamVector,
    env: Environment,
    parametrization: ControlParametrization,
    config: ExperimentConfig,
    epoch: int,
) -> RunRecord:
    try:
        sample = evaluation_sample(params, env, parametrization, config, epoch)
    except DivergenceError as exc:
        exc.epoch = epoch
        raise
    return summarize(epoch, sample)


def run_training(
    config: ExperimentConfig,
    initial: ParamVector | None = None,
    *,
    env: Environment | None = None,
    parametrization: ControlParametrization | None = None,
) -> TrainingResult:
    """Train one configuration from ``initial`` (or a fresh seeded build)."""
    if env is None or parametrization is None:
        env, parametrization = setup(config)
    if initial is None:
        initial = initial_params(config, env, parametrization)
    params = initial.copy()
    expected = build_size(env, parametrization)
    if len(params) != expected:
        raise ControlError(
            f"Initial parameters have length {len(params)}, {config.label} needs {expected}"
        )

    optimizer = Optimizer(
        config.optimizer,
        len(params),
        variant=config.variant,
        hyper=config.hyperparameters(),
        registry=params.registry,
        p_percent=config.p_percent,
        noise_seed=config.seed_noise,
        adadelta_form=config.adadelta_form,
    )
    rc = RolloutConfig(config.N, config.batch_size, env.horizon)

    records = [evaluate(params, env, parametrization, config, 0)]
    log.info("%s epoch 0: J=%.6g ±%.3g", config.label, records[0].mean_J, records[0].ci_half_width)
    for epoch in range(config.epochs):
        gamma, sigma = schedule_eval(config.schedule, epoch)
        for iteration in range(config.batches_per_epoch):
            draws = draw_batch(env, rc, config.seed_data, TRAIN, epoch, iteration)
            try:
                loss, grad = loss_and_grad(env, params, parametrization, rc, draws)
            except DivergenceError as exc:
                exc.epoch, exc.iteration = epoch, iteration
                raise
            if epoch == 0 and iteration == 0 and not np.any(grad):
                log.warning(
                    "%s: first training gradient is zero on every coordinate",
                    config.label,
                )
            params = params.with_data(optimizer.step(params.data, grad, gamma, sigma))
            if not np.all(np.isfinite(params.data)):
                raise DivergenceError(
                    "Non-finite parameters after the optimizer step",
                    epoch=epoch,
                    iteration=iteration,
                )
            log.debug("epoch %d iteration %d: batch loss %.6g", epoch, iteration, loss)
        record = evaluate(params, env, parametrization, config, epoch + 1)
        records.append(record)
        log.info(
            "%s epoch %d: J=%.6g ±%.3g (γ=%g, σ=%g)",
            config.label,
            epoch + 1,
            record.mean_J,
            record.ci_half_width,
            gamma,
            sigma,
        )
    return TrainingResult(records, params)


def build_size(env: Environment, parametrization: ControlParametrization) -> int:
    """Length of the parameter vector of ``parametrization`` plus the environment extras."""
    networks = parametrization.num_networks * parametrization.spec.num_params
    return networks + sum(env.extra_params.values())


def train(config: ExperimentConfig) -> list[RunRecord]:
    return run_training(config).records


COMPARE_SHARED = ("env", "mode", "N", "hidden", "params", "seed_init", "seed_data", "batch_size")


def check_comparable(configs: list[ExperimentConfig]) -> ExperimentConfig:
    """Return the first config once every arm agrees on architecture and data."""
    if not configs:
        raise ControlError("Nothing to compare")
    first = configs[0]
    for other in configs[1:]:
        for key in COMPARE_SHARED:
            if getattr(other, key) != getattr(first, key):
                raise ControlError(
                    f"Cannot compare {first.label} with {other.label}: {key} differs "
                    f"({getattr(first, key)!r} vs {getattr(other, key)!r})"
                )
    return first


@dataclass(frozen=True)
class Comparison:
    """What every arm of a comparison shares."""

    first: ExperimentConfig
    env: Environment
    parametrization: ControlParametrization
    start: ParamVector


def prepare_comparison(configs: list[ExperimentConfig]) -> Comparison:
    first = check_comparable(configs)
    env, parametrization = setup(first)
    start = initial_params(first, env, parametrization)
    log.info("Comparing %d arms from one initial vector of %d parameters", len(configs), len(start))
    return Comparison(first, env, parametrization, start)


def compare(configs: list[ExperimentConfig]) -> dict[str, TrainingResult]:
    """Train every arm from one shared initial vector and shared data streams."""
    shared = prepare_comparison(configs)
    env, parametrization = shared.env, shared.parametrization
    return {
        c.label: run_training(c, shared.start, env=env, parametrization=parametrization)
        for c in configs
    }


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_curves(records: list[RunRecord], path: Path) -> Path:
    """Write ``time,f,f_plus,f_minus`` rows, one per record."""
    frame = pd.DataFrame(
        {
            "time": [r.epoch for r in records],
            "f": [r.mean_J for r in records],
            "f_plus": [r.mean_J + r.ci_half_width for r in records],
            "f_minus": [r.mean_J - r.ci_half_width for r in records],
        },
        columns=CURVE_COLUMNS,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    log.info("Curves written to %s", path)
    return path


def read_curves(path: Path) -> list[RunRecord]:
    """Parse a curve file back into records.

    The half-width comes back as ``f_plus - f``, so it carries a rounding error
    of the order of one ulp of ``f_plus``.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != CURVE_COLUMNS:
        raise ValueError(f"{path}: expected columns {CURVE_COLUMNS}, got {list(frame.columns)}")
    return [
        RunRecord(int(row.time), float(row.f), float(row.f_plus - row.f))
        for row in frame.itertuples(index=False)
    ]


def write_metadata(config: ExperimentConfig, path: Path) -> Path:
    """Write the resolved config in a form :func:`~langevin_control.config.load_config` reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(config))
    return path


def sample_trajectory(
    params: ParamVector,
    env: Environment,
    parametrization: ControlParametrization,
    config: ExperimentConfig,
    sample: int = 0,
) -> TrajectoryBatch:
    """One controlled trajectory, drawn from its own stream, for inspection."""
    rc = RolloutConfig(config.N, 1, env.horizon)
    draws = draw_batch(env, rc, config.seed_data, TRAJECTORY, start=sample)
    return rollout(env, params, parametrization, rc, draws, grad=False).batch


def write_trajectory(batch: TrajectoryBatch, horizon: float, path: Path) -> Path:
    """Write states and controls of the first trajectory in ``batch``, one row per time."""
    states, controls = batch.states[0], batch.controls[0]
    n = controls.shape[0]
    frame = pd.DataFrame({"time": [k * horizon / n for k in range(n + 1)]})
    for i in range(states.shape[1]):
        frame[f"x{i}"] = states[:, i]
    padded = np.vstack([controls, np.full((1, controls.shape[1]), np.nan)])
    for i in range(controls.shape[1]):
        frame[f"u{i}"] = padded[:, i]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
