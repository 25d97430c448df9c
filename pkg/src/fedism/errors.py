"""Exception hierarchy shared by all fedism modules."""

from __future__ import annotations


class FedismError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedismError, ValueError):
    """Invalid specification or configuration value."""


class PartitionError(FedismError):
    """Client partitioning failed after exhausting its retries."""


class DataError(FedismError, ValueError):
    """Malformed input data (e.g. a bad CSV row)."""


class DivergenceError(FedismError, FloatingPointError):
    """Parameters or losses became non-finite during training."""

    def __init__(self, message: str, round_index: int | None = None):
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
        self.round_index = round_index


class MetricError(FedismError, ValueError):
    """A metric is undefined for the given inputs."""


class SchemaError(FedismError, ValueError):
    """A results file does not have the expected columns."""
