"""
Error types raised by the CBUS lab.

Views and management commands map these onto HTTP 400 / exit code 2;
anything else is treated as an internal failure.
"""


class CbusError(Exception):
    """Base class for every error the lab raises on purpose."""


class ArgumentError(CbusError, ValueError):
    """An operation received an argument outside its domain."""


class GenerationError(CbusError):
    """An instance generator could not satisfy its request."""


class ConfigError(CbusError):
    """An experiment, algorithm or estimator configuration is invalid."""
