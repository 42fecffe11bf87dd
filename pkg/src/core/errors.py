"""
Exception types raised by the solver library
"""
from typing import Optional


class SqrtBaError(Exception):
    """Base class for all solver errors"""


class ConfigError(SqrtBaError, ValueError):
    """Invalid configuration or manifest"""


class BalFormatError(SqrtBaError, ValueError):
    """Malformed BAL input; carries the 1-based line number"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateProblemError(SqrtBaError, ValueError):
    """Problem is empty or otherwise unusable after preprocessing"""


class ProjectionError(SqrtBaError, ArithmeticError):
    """A landmark lies in the camera plane (zero depth)"""

    def __init__(self, message: str, camera: Optional[int] = None, landmark: Optional[int] = None):
        self.camera = camera
        self.landmark = landmark
        if camera is not None or landmark is not None:
            message = f"{message} (camera={camera}, landmark={landmark})"
        super().__init__(message)


class BlockStateError(SqrtBaError, RuntimeError):
    """Landmark block operation called in the wrong state"""


class RankDeficiencyError(SqrtBaError, ArithmeticError):
    """Triangular landmark factor is numerically singular"""


class SingularBlockError(SqrtBaError, ArithmeticError):
    """A damped 3x3 landmark Hessian block cannot be inverted"""

    def __init__(self, landmark: int):
        self.landmark = landmark
        super().__init__(f"singular damped landmark Hessian block for landmark {landmark}")


class MissingTraceError(SqrtBaError, LookupError):
    """Some (problem, solver) pairs have no trace"""

    def __init__(self, missing):
        self.missing = list(missing)
        listing = ", ".join(f"{p}/{s}" for p, s in self.missing)
        super().__init__(f"missing traces for: {listing}")


class MemoryBudgetExceeded(SqrtBaError, MemoryError):
    """Tracked allocations exceeded the configured memory limit"""
