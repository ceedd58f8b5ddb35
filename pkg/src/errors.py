"""
Error Types for the Staircase Retraction Probe
Every domain failure is a ProbeError carrying a short machine-readable code
"""

from typing import Any, Dict, Optional


class ProbeError(Exception):
    """Base class for all domain errors raised by the toolkit"""

    code = "probe-error"

    def __init__(self, message: str, code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Serializable error report used by the CLI"""
        report = {"error": self.code, "message": str(self)}
        if self.details:
            report["details"] = self.details
        return report


class InvalidSpec(ProbeError):
    code = "invalid-spec"


class InvalidSurface(ProbeError):
    code = "invalid-surface"


class OperationError(ProbeError):
    code = "index-out-of-range"


class NonPeriodic(ProbeError):
    code = "vertical-not-periodic"


class SurgeryError(ProbeError):
    code = "surgery-failed"


class InvalidConfig(ProbeError):
    code = "invalid-config"


class QuadratureError(ProbeError):
    code = "tolerance-not-met"


class InfeasibleTarget(ProbeError):
    code = "infeasible-target"


class NoConvergence(ProbeError):
    """Iteration budget exhausted; the best iterate travels in details"""

    code = "no-convergence"

    def __init__(self, message: str, best: Any = None, residual: Optional[float] = None, code: Optional[str] = None):
        super().__init__(message, code=code, details={"residual": residual})
        self.best = best
        self.residual = residual


class FitError(ProbeError):
    code = "rank-deficient"


class OutOfRange(ProbeError):
    code = "out-of-range"


class PrecisionError(ProbeError):
    code = "precision-unavailable"
