"""Exception types shared across the simulator."""

from __future__ import annotations


class CxlSimError(Exception):
    """Base class for every error raised by cxlsim."""


class TopologyError(CxlSimError, ValueError):
    """A topology document is malformed or violates the tree invariants."""

    def __init__(self, message: str, node_id: str | None = None):
        self.node_id = node_id
        if node_id is not None:
            message = f"{message} (node {node_id!r})"
        super().__init__(message)


class UnknownNodeError(TopologyError, KeyError):
    def __str__(self) -> str:
        return self.args[0]


class NotAPoolError(TopologyError):
    pass


class TraceFormatError(CxlSimError, ValueError):
    """A trace file could not be parsed; ``line`` is 1-based, header included."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)


class PlacementError(CxlSimError):
    pass


class CollectorError(CxlSimError):
    pass


class ConfigError(CxlSimError, ValueError):
    pass
