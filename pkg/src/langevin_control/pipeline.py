"""Hamilton DAG nodes for one training run.

Each public function is a node in the pipeline DAG.  Hamilton auto-wires
dependencies by matching *parameter names* to *function names* (or to
values provided at execution time via ``driver.execute(inputs=...)``).

Typical execution::

    from hamilton import driver
    from langevin_control import pipeline

    dr = driver.Builder().with_modules(pipeline).build()

    # Train only:
    result = dr.execute(["records"], inputs={"raw_config": {...}, "out_dir": out})

    # Train and write the curve and metadata files:
    result = dr.execute(["curves_path", "metadata_path"], inputs={...})

A comparison runs the DAG once per arm with ``config`` and
``initial_params`` passed as overrides, so every arm starts from the same
vector.
"""

import logging
from pathlib import Path
from typing import Any

from langevin_control import harness
from langevin_control.config import ExperimentConfig, resolve_config
from langevin_control.envs import make_environment
from langevin_control.nets import ControlParametrization, ParamVector
from langevin_control.sim import Environment, parametrization_for

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Stage registry
# ---------------------------------------------------------------------------

# Maps stage names to Hamilton output node names.
STAGE_OUTPUTS: dict[str, list[str]] = {
    "train": ["records"],
    "write": ["curves_path", "metadata_path"],
    "trajectory": ["trajectory_path"],
}


def resolve_outputs(stages: list[str]) -> list[str]:
    """Hamilton node names to request for ``stages``, in order and without repeats."""
    outputs: list[str] = []
    for stage in stages:
        if stage not in STAGE_OUTPUTS:
            raise ValueError(f"Unknown stage '{stage}'. Valid stages: {sorted(STAGE_OUTPUTS)}")
        for node in STAGE_OUTPUTS[stage]:
            if node not in outputs:
                outputs.append(node)
    return outputs


# ---------------------------------------------------------------------------
# Hamilton DAG nodes
# ---------------------------------------------------------------------------


def config(raw_config: dict[str, Any]) -> ExperimentConfig:
    """Validate the merged config file and flag values."""
    return resolve_config(raw_config)


def environment(config: ExperimentConfig) -> Environment:
    return make_environment(config.env, config.params)


def parametrization(environment: Environment, config: ExperimentConfig) -> ControlParametrization:
    return parametrization_for(environment, config.mode, config.N, config.hidden)


def initial_params(
    config: ExperimentConfig, environment: Environment, parametrization: ControlParametrization
) -> ParamVector:
    """Seeded initial weights (overridden with a shared vector in comparisons)."""
    return harness.initial_params(config, environment, parametrization)


def training(
    config: ExperimentConfig,
    environment: Environment,
    parametrization: ControlParametrization,
    initial_params: ParamVector,
) -> harness.TrainingResult:
    """Run the epoch loop."""
    return harness.run_training(
        config, initial_params, env=environment, parametrization=parametrization
    )


def records(training: harness.TrainingResult) -> list[harness.RunRecord]:
    return training.records


def curves_path(records: list[harness.RunRecord], config: ExperimentConfig, out_dir: Path) -> Path:
    """Write ``curves_<label>.csv``."""
    return harness.write_curves(records, out_dir / f"curves_{config.label}.csv")


def metadata_path(config: ExperimentConfig, out_dir: Path) -> Path:
    """Write the resolved config as ``config_<label>.txt``."""
    path = harness.write_metadata(config, out_dir / f"config_{config.label}.txt")
    log.info("Config written to %s", path)
    return path


def trajectory_path(
    training: harness.TrainingResult,
    environment: Environment,
    parametrization: ControlParametrization,
    config: ExperimentConfig,
    out_dir: Path,
) -> Path:
    """Write one trajectory under the trained controls as ``trajectory_<label>.csv``."""
    batch = harness.sample_trajectory(training.params, environment, parametrization, config)
    return harness.write_trajectory(
        batch, environment.horizon, out_dir / f"trajectory_{config.label}.csv"
    )
