"""Load, validate and write experiment configuration files.

A config file is flat TOML::

    env = "fishing"
    mode = "single"
    N = 20
    optimizer = "adam"
    variant = "langevin"
    schedule = "2e-3,1e-3@0;2e-4,0@40"

    [param]          # environment parameter overrides
    beta = 0.2

    [hyper]          # optimizer hyperparameter overrides
    lam = 1e-8

Command-line flags are merged over the file before validation, so both go
through the same checks.
"""

from __future__ import annotations

import dataclasses
import math
import re
import tomllib
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from langevin_control import ControlError
from langevin_control.envs import ENVIRONMENTS, make_environment
from langevin_control.nets import VALID_MODES
from langevin_control.optim import (
    DEFAULT_HYPER,
    VALID_ADADELTA_FORMS,
    VALID_OPTIMIZERS,
    VALID_VARIANTS,
    Hyper,
    Schedule,
    format_schedule,
    parse_schedule,
)

# TOML table name -> ExperimentConfig field
TABLES = {"param": "params", "hyper": "hyper"}
HYPER_KEYS = {f.name for f in dataclasses.fields(Hyper)}

# Recommended schedules per (environment, optimizer), as "gamma,sigma@epoch;..."
DEFAULT_SCHEDULES: dict[tuple[str, str], str] = {
    ("fishing", "adam"): "2e-3,1e-3@0;2e-4,0@40",
    ("fishing", "rmsprop"): "2e-3,5e-3@0;2e-4,0@40",
    ("fishing", "adadelta"): "5e-1,1e-2@0;5e-2,0@40",
    ("hedging", "adam"): "2e-3,2e-3@0;2e-4,0@80",
    ("hedging", "rmsprop"): "2e-3,2e-3@0;2e-4,0@80",
    ("hedging", "adadelta"): "5e-1,5e-3@0;5e-2,0@80",
    ("oil", "adam"): "2e-3,1e-3@0;2e-4,0@60",
    ("oil", "rmsprop"): "2e-3,2e-3@0;2e-4,0@80",
    ("oil", "adadelta"): "5e-1,5e-3@0;5e-2,0@80",
}


def default_schedule(env: str, optimizer: str) -> Schedule:
    try:
        return parse_schedule(DEFAULT_SCHEDULES[(env, optimizer)])
    except KeyError:
        raise ControlError(f"No default schedule for env '{env}' with optimizer '{optimizer}'")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "fishing"
    mode: str = "single"
    N: int = 20
    batch_size: int = 512
    batches_per_epoch: int = 5
    epochs: int = 50
    optimizer: str = "adam"
    variant: str = "base"
    p_percent: float = 100.0
    schedule: Schedule = field(default_factory=lambda: default_schedule("fishing", "adam"))
    eval_mult: int = 25
    seed_init: int = 0
    seed_data: int = 1
    seed_noise: int = 2
    hidden: tuple[int, ...] = (32, 32)
    adadelta_form: str = "lagged"
    params: Mapping[str, Any] = field(default_factory=dict)
    hyper: Mapping[str, float] = field(default_factory=dict)

    @property
    def arm(self) -> str:
        """Short optimizer name, e.g. ``adam``, ``adam-langevin``, ``adam-ll30``."""
        return arm_name(self.optimizer, self.variant, self.p_percent)

    @property
    def label(self) -> str:
        return f"{self.env}_{self.mode}_N{self.N}_{self.arm}"

    @property
    def eval_samples(self) -> int:
        return self.eval_mult * self.batch_size

    def hyperparameters(self) -> Hyper:
        return dataclasses.replace(DEFAULT_HYPER[self.optimizer], **self.hyper)


KNOWN_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(TABLES.values())
INT_KEYS = {
    "N": 1,
    "batch_size": 1,
    "batches_per_epoch": 1,
    "epochs": 0,
    "eval_mult": 1,
    "seed_init": 0,
    "seed_data": 0,
    "seed_noise": 0,
}
ENUM_KEYS: dict[str, set[str]] = {
    "env": set(ENVIRONMENTS),
    "mode": VALID_MODES,
    "optimizer": VALID_OPTIMIZERS,
    "variant": VALID_VARIANTS,
    "adadelta_form": VALID_ADADELTA_FORMS,
}


def arm_name(optimizer: str, variant: str, p_percent: float) -> str:
    if variant == "base":
        return optimizer
    if variant == "langevin":
        return f"{optimizer}-langevin"
    return f"{optimizer}-ll{p_percent:g}"


_ARM_RE = re.compile(
    r"^(?P<opt>[a-z]+)"
    r"(?:-(?P<variant>langevin|l|ll|layer[-_]langevin)(?:-?(?P<p>\d+(?:\.\d+)?))?)?$"
)


def parse_arm(token: str) -> dict[str, Any]:
    """Config keys selected by an arm token such as ``adam-langevin`` or ``rmsprop-ll30``."""
    m = _ARM_RE.match(token.strip().lower())
    if not m or m.group("opt") not in VALID_OPTIMIZERS:
        raise ControlError(
            f"Malformed optimizer arm '{token}' "
            "(expected e.g. adam, adam-langevin, adam-ll30, adam-layer-langevin-30)"
        )
    keys: dict[str, Any] = {"optimizer": m.group("opt"), "variant": "base"}
    variant, p = m.group("variant"), m.group("p")
    if variant in ("langevin", "l"):
        if p is not None:
            raise ControlError(f"Optimizer arm '{token}': a percentage needs a layer variant")
        keys["variant"] = "langevin"
    elif variant is not None:
        keys["variant"] = "layer_langevin"
        if p is not None:
            keys["p_percent"] = float(p)
    return keys


# ---------------------------------------------------------------------------
# Reading and validation
# ---------------------------------------------------------------------------


def read_config_file(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ControlError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ControlError(f"Cannot parse {path}: {exc}") from exc


def _as_int(raw: Mapping[str, Any], key: str, minimum: int) -> int:
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ControlError(f"{key} must be an integer, got {value!r}")
    if value < minimum:
        raise ControlError(f"{key} must be >= {minimum}, got {value}")
    return value


def _as_float(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ControlError(f"{key} must be a number, got {value!r}")
    return float(value)


def resolve_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a merged raw mapping and fill in every default."""
    unknown = set(raw) - KNOWN_KEYS - set(TABLES)
    if unknown:
        raise ControlError(
            f"Unknown config key(s): {', '.join(sorted(unknown))}. "
            f"Valid keys: {', '.join(sorted(KNOWN_KEYS | set(TABLES)))}"
        )
    values: dict[str, Any] = {}

    for key, valid in ENUM_KEYS.items():
        if key in raw:
            if raw[key] not in valid:
                raise ControlError(
                    f"{key} must be one of {', '.join(sorted(valid))}, got {raw[key]!r}"
                )
            values[key] = raw[key]

    for key, minimum in INT_KEYS.items():
        if key in raw:
            values[key] = _as_int(raw, key, minimum)

    if "p_percent" in raw:
        p = _as_float(raw["p_percent"], "p_percent")
        if not 0.0 <= p <= 100.0:
            raise ControlError(f"p_percent must be in [0, 100], got {p:g}")
        values["p_percent"] = p

    if "hidden" in raw:
        hidden = raw["hidden"]
        if not isinstance(hidden, list | tuple) or not all(
            isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden
        ):
            raise ControlError(f"hidden must be a list of positive integers, got {hidden!r}")
        values["hidden"] = tuple(hidden)

    env = values.get("env", "fishing")
    optimizer = values.get("optimizer", "adam")
    schedule = raw.get("schedule")
    if schedule is None:
        values["schedule"] = default_schedule(env, optimizer)
    elif isinstance(schedule, Schedule):
        values["schedule"] = schedule
    elif isinstance(schedule, str):
        values["schedule"] = parse_schedule(schedule)
    else:
        raise ControlError(f"schedule must be a string like '2e-3,1e-3@0', got {schedule!r}")

    params = raw.get("param", {})
    if not isinstance(params, Mapping):
        raise ControlError("[param] must be a table")
    make_environment(env, params)
    values["params"] = dict(params)

    hyper = raw.get("hyper", {})
    if not isinstance(hyper, Mapping):
        raise ControlError("[hyper] must be a table")
    bad = set(hyper) - HYPER_KEYS
    if bad:
        raise ControlError(
            f"Unknown [hyper] key(s): {', '.join(sorted(bad))}. "
            f"Valid keys: {', '.join(sorted(HYPER_KEYS))}"
        )
    values["hyper"] = {k: _as_float(v, f"hyper.{k}") for k, v in hyper.items()}

    return ExperimentConfig(**values)


def merge_overrides(raw: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Flags win over file keys; ``None`` means the flag was not given."""
    merged = dict(raw)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def load_config(
    path: Path | None = None, overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    raw = read_config_file(path) if path is not None else {}
    return resolve_config(merge_overrides(raw, overrides or {}))


def expand_arms(raw: Mapping[str, Any], arms: Sequence[str]) -> list[ExperimentConfig]:
    """One config per optimizer arm, all sharing everything else in ``raw``."""
    if not arms:
        raise ControlError("compare needs at least one optimizer arm")
    configs = [resolve_config(merge_overrides(raw, parse_arm(token))) for token in arms]
    labels = [c.label for c in configs]
    dupes = sorted({label for label in labels if labels.count(label) > 1})
    if dupes:
        raise ControlError(f"Duplicate comparison arm(s): {', '.join(dupes)}")
    return configs


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, list | tuple):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if hasattr(value, "tolist"):
        return _toml_value(value.tolist())
    raise ControlError(f"Cannot write {type(value).__name__} value {value!r} to a config file")


def dump_config(config: ExperimentConfig) -> str:
    """Write ``config`` in the flat dialect read by :func:`load_config`."""
    lines: list[str] = []
    for f in dataclasses.fields(config):
        if f.name in TABLES.values():
            continue
        value = getattr(config, f.name)
        if isinstance(value, Schedule):
            value = format_schedule(value)
        lines.append(f"{f.name} = {_toml_value(value)}")
    for table, field_name in TABLES.items():
        entries = getattr(config, field_name)
        if entries:
            lines.append("")
            lines.append(f"[{table}]")
            for key, value in entries.items():
                lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"
