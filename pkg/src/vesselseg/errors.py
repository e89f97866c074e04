"""Exception types shared across the package."""


class VesselSegError(Exception):
    """Base class for all package errors."""


class ConfigError(VesselSegError):
    """Invalid or inconsistent configuration."""


class DataError(VesselSegError):
    """Missing, unreadable, or malformed input data."""


class UndefinedMetricError(VesselSegError):
    """A metric's denominator is empty or zero; the value does not exist.

    Callers aggregating over many frames should catch this and record the
    metric as absent rather than coercing it to 0 or 1.
    """


class NumericFault(VesselSegError):
    """Non-finite values encountered during computation."""
