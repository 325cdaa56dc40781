"""Benchmark control problems and their registry."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

from langevin_control import ControlError
from langevin_control.envs.fishing import FishingEnv, FishingParams
from langevin_control.envs.hedging import HedgingEnv, HestonParams
from langevin_control.envs.oil import OilEnv, OilParams
from langevin_control.envs.params import coerce_overrides
from langevin_control.sim import Environment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvEntry:
    env_cls: type[Environment]
    params_cls: type
    summary: str


ENVIRONMENTS: dict[str, EnvEntry] = {
    "fishing": EnvEntry(
        FishingEnv, FishingParams, "Multi-species fishing quotas with a quota-change penalty"
    ),
    "hedging": EnvEntry(
        HedgingEnv, HestonParams, "Call-basket hedge on Heston models under a CVaR objective"
    ),
    "oil": EnvEntry(OilEnv, OilParams, "Oil extraction and storage under a Black-Scholes price"),
}


def make_environment(name: str, overrides: Mapping[str, Any] | None = None) -> Environment:
    """Build environment ``name`` with its parameters overridden by ``overrides``."""
    if name not in ENVIRONMENTS:
        raise ControlError(
            f"Unknown environment '{name}'; choose from {', '.join(sorted(ENVIRONMENTS))}"
        )
    entry = ENVIRONMENTS[name]
    kwargs = coerce_overrides(entry.params_cls, overrides or {}, name)
    try:
        params = entry.params_cls(**kwargs)
    except TypeError as exc:
        raise ControlError(f"Invalid {name} parameters: {exc}") from exc
    if kwargs:
        log.debug("%s parameter overrides: %s", name, sorted(kwargs))
    return entry.env_cls(params)  # type: ignore[call-arg]


__all__ = [
    "ENVIRONMENTS",
    "EnvEntry",
    "FishingEnv",
    "HedgingEnv",
    "OilEnv",
    "make_environment",
]
