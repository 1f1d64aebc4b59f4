"""
Exception types raised by kmte.  Every error carries a stable ``code`` so that
the command line front-end can emit a machine-readable error object.
"""
from typing import Any, Dict, Optional

__all__ = [
    "KmteError",
    "ConfigurationError",
    "DataValidationError",
    "DegenerateDesignError",
    "DegenerateInstrumentError",
    "GridError",
    "FilterError",
    "EstimationError",
    "SeparationError",
    "CalibrationError",
    "NonFiniteValueError",
]


class KmteError(RuntimeError):
    code = "kmte"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}

    @property
    def message(self) -> str:
        return self.args[0]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "details": self.details,
            }
        }


class ConfigurationError(KmteError):
    code = "configuration"


class DataValidationError(KmteError, ValueError):
    code = "data_validation"


class DegenerateDesignError(KmteError):
    code = "degenerate_design"


class DegenerateInstrumentError(DegenerateDesignError):
    code = "degenerate_instrument_design"


class GridError(KmteError, ValueError):
    code = "grid"


class FilterError(KmteError, ValueError):
    code = "filter"


class EstimationError(KmteError):
    code = "estimation"


class SeparationError(EstimationError):
    code = "separation"


class CalibrationError(KmteError):
    code = "calibration"


class NonFiniteValueError(KmteError, ValueError):
    code = "non_finite"
