"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class FitError(RuntimeError):
    """A fringe or device fit could not be carried out."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(RuntimeError):
    """A model parameter needed by the operation has not been calibrated."""


class ConfigError(DomainError):
    """A configuration document is malformed or names an unknown field."""


class DataError(RuntimeError):
    """An input data file is empty, truncated or inconsistent."""
