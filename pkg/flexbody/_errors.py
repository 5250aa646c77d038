"""Exceptions raised across flexbody.

Every error subclasses the builtin a caller would naturally catch, so
``except ValueError`` keeps working, and carries a :meth:`to_dict` used by the
command line to print machine-readable error JSON.
"""

__all__ = [
    "ConfigurationError",
    "DegenerateNormalizerError",
    "FlexbodyError",
    "InstabilityError",
    "IterationLimitError",
    "MaskError",
    "MissingPrerequisiteError",
    "RangeViolationError",
]


class FlexbodyError(Exception):
    """Mixin shared by all flexbody errors."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": self.message}
        for key, val in self.details.items():
            if hasattr(val, "tolist"):
                val = val.tolist()
            out[key] = val
        return out


class RangeViolationError(FlexbodyError, ValueError):
    pass


class InstabilityError(FlexbodyError, ValueError):
    """The center of gravity left the support polygon; the robot would tip."""


class IterationLimitError(FlexbodyError, RuntimeError):
    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message, last_iterate=last_iterate, residual=residual)
        self.last_iterate = last_iterate
        self.residual = residual


class ConfigurationError(FlexbodyError, ValueError):
    pass


class MaskError(FlexbodyError, ValueError):
    pass


class DegenerateNormalizerError(FlexbodyError, ValueError):
    pass


class MissingPrerequisiteError(FlexbodyError, FileNotFoundError):
    def __init__(self, message, requires=None, **details):
        super().__init__(message, requires=requires, **details)
        self.requires = requires
