"""Exception hierarchy shared by the library, the CLI and the HTTP surface.

Every failure carries a human readable ``detail`` and an ``exit_code`` so the
CLI can turn it into a process status and a JSON record without a lookup table.
"""
from typing import Any, Dict, Optional


class LabError(Exception):
    exit_code = 3

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context = context

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"error": type(self).__name__, "detail": self.detail}
        for key, value in self.context.items():
            if value is not None:
                record[key] = value
        return record


class ConfigError(LabError):
    exit_code = 2

    def __init__(self, detail: str, field: Optional[str] = None, **context: Any):
        super().__init__(detail, field=field, **context)
        self.field = field


class RangeError(LabError, ValueError):
    pass


class GridMismatch(LabError, ValueError):
    pass


class NonConvergent(LabError):
    pass


class DegenerateVarianceError(LabError, ValueError):
    pass


class CapExceeded(LabError):
    def __init__(self, cap: int, start: Optional[float] = None):
        super().__init__(f"no return to [1/2, 1] within {cap} steps", cap=cap, start=start)
        self.cap = cap


class ResourceLimitError(LabError):
    pass


class LengthError(LabError, ValueError):
    pass


class TimeChangedPath(LabError, ValueError):
    pass


class SizeMismatch(LabError, ValueError):
    pass


class TooLarge(LabError, ValueError):
    pass


class GridError(LabError, ValueError):
    pass


class AdmissibilityError(LabError, ValueError):
    pass


class BudgetExceeded(LabError):
    pass


class QuadratureFailure(LabError):
    pass


class InsufficientData(LabError, ValueError):
    pass


class NonPositive(LabError, ValueError):
    pass


class RateFormulaError(LabError):
    pass


class DegenerateVarianceWarning(UserWarning):
    pass


class DroppedDataWarning(UserWarning):
    pass
