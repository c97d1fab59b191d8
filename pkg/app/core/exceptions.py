from typing import Optional


class WorkbenchError(Exception):
    """Base class for every error raised by the workbench."""


# Grid model

class InvalidCaseError(WorkbenchError):
    """A case violates one of the GridCase invariants."""


class CaseFormatError(InvalidCaseError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DanglingBusError(CaseFormatError):
    """A line, sensor or reference points at a bus absent from the bus list."""


class DuplicateSensorError(CaseFormatError):
    pass


class DuplicateLineError(CaseFormatError):
    pass


class ZeroImpedanceError(WorkbenchError):
    pass


# State estimation

class RankDeficientError(WorkbenchError):
    """The measurement matrix has numeric rank below its column count."""


class UnobservableError(RankDeficientError):
    pass


class ConvergenceError(WorkbenchError):
    pass


# Attacks

class InfeasibleAttackError(WorkbenchError):
    pass


class AmbiguousNullSpaceError(InfeasibleAttackError):
    pass


class EmptyFeasibleSpaceError(InfeasibleAttackError):
    pass


class DegenerateSamplesError(WorkbenchError):
    pass


# Harness

class ScenarioError(WorkbenchError):
    pass


class GridMismatchError(ScenarioError):
    """Tables being joined do not share a magnitude grid."""
