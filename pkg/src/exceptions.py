"""Exceptions raised by the package.

Every exception carries the exit status the command line reports for it, so
the error handlers can turn any failure into a structured message.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class OmniError(Exception):
    """Base class for all errors raised by the package."""

    code = EXIT_INTERNAL
    name = "Internal Error"

    def __init__(self, description, details=None):
        super().__init__(description)
        self.description = description
        self.details = details or []

    def to_dict(self):
        payload = {"code": self.code, "name": self.name,
                   "description": self.description}
        if self.details:
            payload["details"] = list(self.details)
        return payload


class InputError(OmniError):
    code = EXIT_INPUT
    name = "Input Error"


class GeometryError(InputError):
    name = "Geometry Error"


class PredictionError(InputError):
    name = "Prediction Error"


class LabelError(InputError):
    name = "Label Error"


class CorpusError(InputError):
    """Raised when an annotation corpus references unknown records.

    The per-record problems are kept in ``details``.
    """

    name = "Corpus Error"


class ConfigError(InputError):
    name = "Config Error"


class DimensionError(InputError):
    name = "Dimension Error"


class FilterError(InputError):
    name = "Filter Error"


class BudgetError(InputError):
    name = "Budget Error"


class CalibrationError(InputError):
    name = "Calibration Error"


class InstanceTooLargeError(InputError):
    name = "Instance Too Large"
