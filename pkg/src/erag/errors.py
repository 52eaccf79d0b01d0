"""Exception types shared across the toolkit."""

from __future__ import annotations


class EragError(Exception):
    """Base class for all toolkit errors."""


class MalformedRecordError(EragError):
    """An input file line could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


class UnsupportedLabelKindError(EragError):
    """A ranking metric was applied to a label kind it does not support."""


class UnsupportedTaskError(EragError):
    """An annotation scheme was applied to a task it is not defined for."""


class BackendUnavailableError(EragError):
    """Transport-level failure that persisted through all retry attempts."""


class BackendRejectedError(EragError):
    """The backend answered with a non-retryable error; carries its message."""


class UndefinedCorrelationError(EragError):
    """Correlation is undefined (constant input in one of the variables)."""


class InsufficientDataError(EragError):
    """Fewer than two joined samples were available for correlation."""


class MissingArtifactError(EragError):
    """A pipeline stage needs a file that an earlier stage has not produced."""
