"""Parameter-record helpers shared by the environments."""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping
from typing import Any

import numpy as np

from langevin_control import ControlError


def broadcast_fields(record: Any, size: int, names: Iterable[str]) -> None:
    """Turn scalar fields of a frozen dataclass into length-``size`` float vectors."""
    for name in names:
        value = np.asarray(getattr(record, name), dtype=np.float64)
        if value.ndim == 0:
            value = np.full(size, float(value))
        object.__setattr__(record, name, value)


def require_positive(env: str, **values: np.ndarray | float) -> None:
    for name, value in values.items():
        if not np.all(np.asarray(value) > 0):
            raise ControlError(f"{env} {name} must be > 0 componentwise, got {value}")


def coerce_overrides(cls: type, overrides: Mapping[str, object], env: str) -> dict[str, Any]:
    """Check override keys against ``cls`` fields and convert lists to arrays."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in fields:
            raise ControlError(
                f"Unknown {env} parameter '{key}'; valid keys: {', '.join(sorted(fields))}"
            )
        if isinstance(value, list | tuple):
            try:
                out[key] = np.asarray(value, dtype=np.float64)
            except ValueError as exc:
                raise ControlError(f"{env} parameter '{key}' must be numeric") from exc
        else:
            out[key] = value
    return out


def params_to_dict(record: Any) -> dict[str, object]:
    """Plain-Python view of a parameter record (arrays become lists)."""
    out: dict[str, object] = {}
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
    return out
