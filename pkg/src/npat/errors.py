"""Exception hierarchy. Each family maps to one CLI exit code."""
from __future__ import annotations

from .config import EXIT_CONFIG, EXIT_GEOMETRY, EXIT_NUMERIC


class NpatError(Exception):
    exit_code = EXIT_CONFIG


class ConfigError(NpatError):
    """Invalid input, configuration or file; nothing numerical went wrong."""
    exit_code = EXIT_CONFIG


class NumericError(NpatError):
    """A computation failed or produced an invalid result."""
    exit_code = EXIT_NUMERIC


class GeometryMismatch(NpatError):
    """Data recorded on one geometry was handed to another."""
    exit_code = EXIT_GEOMETRY


class NonDivisibleSpacing(ConfigError):
    pass


class PadTooSmall(ConfigError):
    pass


class InteriorViolation(ConfigError):
    pass


class EmptyMask(ConfigError):
    pass


class CflViolation(ConfigError):
    pass


class IllPosedBoundary(ConfigError):
    """Impedance sign paired with the wrong direction of integration."""


class DriveMismatch(ConfigError):
    pass


class SupportViolation(ConfigError):
    pass


class VelocityNotZero(ConfigError):
    pass


class InsufficientData(ConfigError):
    pass


class FieldFileError(ConfigError):
    pass


class NonFiniteField(NumericError):
    pass


class EnergyIncrease(NumericError):
    pass


class CgDivergence(NumericError):
    pass


class NonFiniteRay(NumericError):
    pass
