"""Exception types shared across the package."""

from __future__ import annotations


class ResourceLimitError(ValueError):
    """A circuit or request exceeds a configured size bound."""


class GraphError(ValueError):
    """Malformed task graph: unknown ids, cycles, double producers."""


class NotReadyError(RuntimeError):
    """A result or report was requested before it exists."""


class ProtocolError(RuntimeError):
    """A worker message arrived out of sequence or could not be decoded."""


class TaskFailedError(RuntimeError):
    """Raised inside the executor to carry a task failure message."""
