"""CLI entry point for langevin-control."""

import logging
import sys
from pathlib import Path
from typing import Annotated, Any

import click
import typer

from langevin_control import ControlError, DivergenceError, ZeroGradientError, __version__
from langevin_control.config import expand_arms, merge_overrides, read_config_file

log = logging.getLogger(__name__)

app = typer.Typer(
    name="langevin-control",
    help="Neural stochastic optimal control trained with Langevin optimizers.",
    no_args_is_help=True,
)

DEFAULT_OUT_DIR = Path("langevin_output")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _version_callback(value: bool) -> None:
    if value:
        print(f"langevin-control {__version__}")
        raise typer.Exit()


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )


def _raw_config(config: Path | None, overrides: dict[str, Any]) -> dict[str, Any]:
    """Config file contents (or nothing) with the given flags merged on top."""
    raw = read_config_file(config) if config is not None else {}
    return merge_overrides(raw, overrides)


# ---------------------------------------------------------------------------
# Hamilton driver helpers
# ---------------------------------------------------------------------------


def _build_driver(verbose: bool = False):
    """Build a Hamilton driver wired to the training pipeline."""
    import os

    # Disable Hamilton telemetry before first import
    os.environ["HAMILTON_TELEMETRY_ENABLED"] = "false"

    logging.getLogger("hamilton").setLevel(logging.CRITICAL + 1)

    from hamilton import driver

    from langevin_control import adapters, pipeline

    builder = driver.Builder().with_modules(pipeline)
    if verbose:
        builder = builder.with_adapters(adapters.TimingAdapter())
    else:
        builder = builder.with_adapters(adapters.ProgressAdapter())
    return builder.build()


# ---------------------------------------------------------------------------
# Version callback (top-level)
# ---------------------------------------------------------------------------


@app.callback()
def _app_callback(
    version: Annotated[
        bool, typer.Option("--version", callback=_version_callback, is_eager=True)
    ] = False,
) -> None:
    pass


# ---------------------------------------------------------------------------
# run / compare
# ---------------------------------------------------------------------------

ConfigArg = Annotated[Path | None, typer.Argument(help="Path to a TOML config file")]
EnvOpt = Annotated[str | None, typer.Option("--env", help="fishing, hedging or oil")]
ModeOpt = Annotated[str | None, typer.Option("--mode", help="single or per_timestep")]
StepsOpt = Annotated[int | None, typer.Option("--N", help="Number of Euler steps")]
EpochsOpt = Annotated[int | None, typer.Option("--epochs", help="Training epochs")]
BatchOpt = Annotated[int | None, typer.Option("--batch-size", help="Trajectories per batch")]
BatchesOpt = Annotated[
    int | None, typer.Option("--batches-per-epoch", help="Optimizer steps per epoch")
]
SeedInitOpt = Annotated[int | None, typer.Option("--seed-init", help="Weight init seed")]
SeedDataOpt = Annotated[int | None, typer.Option("--seed-data", help="Brownian/initial seed")]
SeedNoiseOpt = Annotated[int | None, typer.Option("--seed-noise", help="Langevin noise seed")]
EvalMultOpt = Annotated[
    int | None, typer.Option("--eval-mult", help="Evaluation sample size in batches")
]
ScheduleOpt = Annotated[
    str | None, typer.Option("--schedule", help="Step/noise schedule, e.g. '2e-3,1e-3@0;2e-4,0@40'")
]
OutDirOpt = Annotated[Path | None, typer.Option("-o", "--out-dir", help="Output directory")]
VerboseOpt = Annotated[bool, typer.Option("-v", "--verbose", help="Enable debug logging")]


@app.command()
def run(
    config: ConfigArg = None,
    env: EnvOpt = None,
    mode: ModeOpt = None,
    n: StepsOpt = None,
    optimizer: Annotated[
        str | None, typer.Option("--optimizer", help="adam, rmsprop or adadelta")
    ] = None,
    variant: Annotated[
        str | None, typer.Option("--variant", help="base, langevin or layer_langevin")
    ] = None,
    p_percent: Annotated[
        float | None, typer.Option("--p-percent", help="Share of layers receiving noise")
    ] = None,
    epochs: EpochsOpt = None,
    batch_size: BatchOpt = None,
    batches_per_epoch: BatchesOpt = None,
    seed_init: SeedInitOpt = None,
    seed_data: SeedDataOpt = None,
    seed_noise: SeedNoiseOpt = None,
    eval_mult: EvalMultOpt = None,
    schedule: ScheduleOpt = None,
    out_dir: OutDirOpt = None,
    trajectory: Annotated[
        bool, typer.Option("--trajectory", help="Also write one sample trajectory")
    ] = False,
    verbose: VerboseOpt = False,
) -> None:
    """Train one configuration and write its curve and config files."""
    _setup_logging(verbose)
    from langevin_control import ui
    from langevin_control.pipeline import resolve_outputs

    raw = _raw_config(
        config,
        {
            "env": env,
            "mode": mode,
            "N": n,
            "optimizer": optimizer,
            "variant": variant,
            "p_percent": p_percent,
            "epochs": epochs,
            "batch_size": batch_size,
            "batches_per_epoch": batches_per_epoch,
            "seed_init": seed_init,
            "seed_data": seed_data,
            "seed_noise": seed_noise,
            "eval_mult": eval_mult,
            "schedule": schedule,
        },
    )
    out = out_dir or DEFAULT_OUT_DIR
    out.mkdir(parents=True, exist_ok=True)

    stages = ["train", "write"] + (["trajectory"] if trajectory else [])
    dr = _build_driver(verbose=verbose)
    ui.info(f"Output → [bold]{out}[/bold]")
    dr.execute(resolve_outputs(stages), inputs={"raw_config": raw, "out_dir": out})


@app.command()
def compare(
    config: ConfigArg = None,
    optimizers: Annotated[
        str,
        typer.Option(
            "--optimizers", help="Comma-separated arms, e.g. adam,adam-langevin,adam-ll30"
        ),
    ] = "adam,adam-langevin",
    env: EnvOpt = None,
    mode: ModeOpt = None,
    n: StepsOpt = None,
    epochs: EpochsOpt = None,
    batch_size: BatchOpt = None,
    batches_per_epoch: BatchesOpt = None,
    seed_init: SeedInitOpt = None,
    seed_data: SeedDataOpt = None,
    seed_noise: SeedNoiseOpt = None,
    eval_mult: EvalMultOpt = None,
    schedule: ScheduleOpt = None,
    out_dir: OutDirOpt = None,
    verbose: VerboseOpt = False,
) -> None:
    """Train several optimizer arms from one shared initial vector."""
    _setup_logging(verbose)
    from langevin_control import harness, ui
    from langevin_control.pipeline import resolve_outputs

    raw = _raw_config(
        config,
        {
            "env": env,
            "mode": mode,
            "N": n,
            "epochs": epochs,
            "batch_size": batch_size,
            "batches_per_epoch": batches_per_epoch,
            "seed_init": seed_init,
            "seed_data": seed_data,
            "seed_noise": seed_noise,
            "eval_mult": eval_mult,
            "schedule": schedule,
        },
    )
    arms = [token for token in optimizers.split(",") if token.strip()]
    configs = expand_arms(raw, arms)
    shared = harness.prepare_comparison(configs)
    first = shared.first

    out = out_dir or DEFAULT_OUT_DIR
    out.mkdir(parents=True, exist_ok=True)
    ui.info(f"Output → [bold]{out}[/bold]")
    ui.heading(f"Comparing {len(configs)} arms on {first.env} (N={first.N}, {first.mode})")

    dr = _build_driver(verbose=verbose)
    outputs = resolve_outputs(["train", "write"])
    rows = []
    for cfg in configs:
        result = dr.execute(
            outputs,
            inputs={"raw_config": raw, "out_dir": out},
            overrides={
                "config": cfg,
                "environment": shared.env,
                "parametrization": shared.parametrization,
                "initial_params": shared.start,
            },
        )
        last = result["records"][-1]
        rows.append((cfg.label, last.mean_J, last.ci_half_width))
    ui.comparison_table(rows)


# ---------------------------------------------------------------------------
# gradcheck / list-envs
# ---------------------------------------------------------------------------


@app.command()
def gradcheck(
    config: ConfigArg = None,
    env: EnvOpt = None,
    mode: ModeOpt = None,
    n: Annotated[int, typer.Option("--N", help="Number of Euler steps")] = 5,
    batch_size: Annotated[int, typer.Option("--batch-size", help="Fixed batch size")] = 2,
    seed_init: SeedInitOpt = None,
    seed: Annotated[int, typer.Option("--seed", help="Seed of the fixed batch")] = 0,
    step: Annotated[float, typer.Option("--step", help="Finite-difference step")] = 1e-5,
    tol: Annotated[float, typer.Option("--tol", help="Largest accepted relative error")] = 1e-4,
    relative_floor: Annotated[
        float, typer.Option("--relative-floor", help="Denominator floor as a share of max|g|")
    ] = 0.0,
    verbose: VerboseOpt = False,
) -> None:
    """Compare tape gradients with central finite differences on one fixed batch."""
    _setup_logging(verbose)
    from langevin_control import harness, ui
    from langevin_control.config import resolve_config
    from langevin_control.sim import gradient_check

    cfg = resolve_config(
        _raw_config(config, {"env": env, "mode": mode, "N": n, "seed_init": seed_init})
    )
    environment, parametrization = harness.setup(cfg)
    params = harness.initial_params(cfg, environment, parametrization)
    ui.heading(f"Gradient check: {cfg.env}, N={cfg.N}, {cfg.mode}, {len(params)} parameters")
    try:
        worst = gradient_check(
            environment,
            params,
            parametrization,
            batch_size=batch_size,
            seed=seed,
            step=step,
            relative_floor=relative_floor,
        )
    except ZeroGradientError as exc:
        ui.error(str(exc))
        raise SystemExit(2) from exc
    if worst <= tol:
        ui.success(f"max relative error {worst:.3e} (tolerance {tol:g})")
        return
    ui.error(f"max relative error {worst:.3e} exceeds tolerance {tol:g}")
    raise SystemExit(2)


@app.command("list-envs")
def list_envs() -> None:
    """Show every environment with its dimensions and default parameters."""
    from langevin_control import ui
    from langevin_control.envs import ENVIRONMENTS, make_environment

    for name, entry in ENVIRONMENTS.items():
        ui.environment_table(name, entry.summary, make_environment(name).describe())


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> None:
    """Entry point for the langevin-control CLI."""
    try:
        app(argv, standalone_mode=False)
    except click.exceptions.NoArgsIsHelpError:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except SystemExit as e:
        if e.code:
            sys.exit(e.code)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
    except ControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
    except KeyboardInterrupt:
        sys.exit(130)
