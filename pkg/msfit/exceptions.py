"""Errors raised by msfit."""

from __future__ import annotations

from collections.abc import Sequence


class MsfitError(Exception):
    """Base class for all msfit errors."""


class ConfigError(MsfitError):
    """Invalid configuration, profile or covariate reference."""


class StructureError(ConfigError):
    """Multi-state structure failed validation."""

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DataError(ConfigError):
    """An observation row failed validation."""

    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class NumericalError(MsfitError):
    """A numerical procedure failed."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of a distribution function."""


class LikelihoodDomainError(NumericalError):
    """Non-finite likelihood contribution."""

    def __init__(self, message: str, observation_id=None) -> None:
        self.observation_id = observation_id
        super().__init__(
            message if observation_id is None
            else f"{message} (observation {observation_id})"
        )


class ConvergenceError(NumericalError):
    """Optimizer or EM did not converge."""

    def __init__(self, message: str, trace: Sequence[float] = ()) -> None:
        self.trace = list(trace)
        super().__init__(message)


class CovarianceError(NumericalError):
    """Covariance matrix unusable even after repair."""


class SelectionError(NumericalError):
    """Every candidate model failed to fit."""

    def __init__(self, failures: dict[str, str]) -> None:
        self.failures = dict(failures)
        super().__init__(
            "all candidates failed: "
            + "; ".join(f"{name}: {msg}" for name, msg in self.failures.items())
        )
