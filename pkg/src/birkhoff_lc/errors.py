"""Diagnostic exception hierarchy.

Everything user-facing derives from CircuitError so the CLI can map any
failure to a one-line diagnostic and exit code 1.  Parser errors carry a
line/column pair.
"""


class CircuitError(Exception):
    """Base class for all diagnostics raised by this package."""


class NetlistError(CircuitError):
    """Parse-time diagnostic with source position."""

    def __init__(self, message, line=None, column=None, code="SyntaxError"):
        self.line = line
        self.column = column
        self.code = code
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(f"{code}: {message}{where}")


class DuplicateBranch(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="DuplicateBranch")


class UnknownNode(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="UnknownNode")


class UnknownDeviceKind(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="UnknownDeviceKind")


class ZeroLinearValue(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="ZeroLinearValue")


class DisconnectedGraph(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="DisconnectedGraph")


class NoLoop(NetlistError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message, line, column, code="NoLoop")


class InvalidExplicitLoop(CircuitError):
    pass


class DimensionMismatch(CircuitError):
    pass


class RankDeficiency(CircuitError):
    pass


class SingularTransform(CircuitError):
    pass


class MissingDevice(CircuitError):
    pass


class NotConservative(CircuitError):
    pass


class ImplicitSolveFailure(CircuitError):
    pass


class DegeneratePivot(CircuitError):
    pass


class NonlinearInductorLoop(CircuitError):
    pass


class SingularMassMatrix(CircuitError):
    pass


class NonlinearDevicePresent(CircuitError):
    pass


class InconsistentInitialState(CircuitError):
    pass


class DomainError(CircuitError):
    """A device function was evaluated outside its declared domain."""
