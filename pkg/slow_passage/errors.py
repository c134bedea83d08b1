"""Exceptions raised by the slow_passage library.

All errors derive from ``ValueError`` so callers validating input with a plain
``except ValueError`` keep working. Each error carries a short ``code`` that the
CLI reports in its machine-readable error line.
"""

from typing import Any


class PwlError(ValueError):
    code = "pwl-error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"error": self.code, "message": self.message}
        if self.details:
            data["details"] = {key: _plain(value) for key, value in self.details.items()}
        return data


class DegenerateSpectrumError(PwlError):
    code = "degenerate-spectrum"


class EventBudgetError(PwlError):
    code = "event-budget"


class OutOfRegionError(PwlError):
    code = "out-of-region"


class AdmissibilityError(PwlError):
    code = "inadmissible"


class ConnectionFailedError(PwlError):
    code = "connection-failed"


class ConvergenceError(PwlError):
    code = "no-convergence"


def _plain(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    return value
