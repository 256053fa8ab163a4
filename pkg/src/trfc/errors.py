"""Exception hierarchy shared by the simulator, estimators and CLI."""


class TrfcError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(TrfcError, ValueError):
    """An input lies outside the domain of a model function."""


class ConfigurationError(TrfcError):
    """Malformed, inconsistent or missing configuration."""


class SimulationFault(TrfcError):
    """The vehicle simulation left its valid operating regime."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class SolverFault(TrfcError):
    """The least-squares solver produced non-finite values."""
