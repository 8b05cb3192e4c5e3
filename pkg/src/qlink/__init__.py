"""Atom-photon entanglement distribution over telecom fiber: state algebra,
link models, Monte-Carlo event generation, estimation and distance forecasts."""

__version__ = "0.1.0"

from .errors import CalibrationError, ConfigError, DataError, DomainError, FitError  # noqa: F401
