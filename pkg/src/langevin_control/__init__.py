"""langevin_control: neural stochastic optimal control trained with Langevin optimizers."""

from __future__ import annotations

__version__ = "0.1.0"


class ControlError(Exception):
    """User-facing error, printed without a traceback."""


class DivergenceError(ControlError):
    """A simulated trajectory left the domain where the scheme is defined.

    ``step`` is the Euler step that produced the bad state; the harness fills
    in ``epoch`` and ``iteration`` when the failure happens during training.
    """

    def __init__(
        self,
        message: str,
        *,
        step: int | None = None,
        epoch: int | None = None,
        iteration: int | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.step = step
        self.epoch = epoch
        self.iteration = iteration

    def __str__(self) -> str:
        where = []
        if self.epoch is not None:
            where.append(f"epoch {self.epoch}")
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.step is not None:
            where.append(f"step {self.step}")
        if not where:
            return self.message
        return f"{self.message} ({', '.join(where)})"


class ConstraintViolation(DivergenceError):
    """An operating constraint of an environment was broken during a rollout."""


class ZeroGradientError(ControlError):
    """The pathwise gradient vanished on every coordinate, so nothing can be checked."""


__all__ = [
    "ConstraintViolation",
    "ControlError",
    "DivergenceError",
    "ZeroGradientError",
    "__version__",
]
