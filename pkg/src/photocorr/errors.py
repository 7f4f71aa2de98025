"""Exception hierarchy.

The CLI maps each family to its own exit code, so new exceptions should
subclass one of the four family bases rather than ``PhotocorrError``.
"""


class PhotocorrError(Exception):
    """Base class for every error raised by this package."""


# -- validation family ------------------------------------------------------

class ValidationError(PhotocorrError, ValueError):
    """Input data or parameters violate a documented invariant."""


class ParameterError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class FormatError(ValidationError):
    """A stack file does not follow the PFS1/PFA1 layout."""


class CorruptionError(FormatError):
    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


# -- capability family ------------------------------------------------------

class CapabilityError(PhotocorrError):
    """The operation is not available for this kind of input."""


class ModeError(CapabilityError):
    pass


# -- runtime (analysis) family ---------------------------------------------

class AnalysisError(PhotocorrError):
    pass


class InsufficientCountsError(AnalysisError):
    pass


class NoAntibunchingError(AnalysisError):
    pass


class UndefinedRatioError(AnalysisError):
    pass


class NormalizationError(AnalysisError):
    pass


class AllNoiseError(AnalysisError):
    pass


class FitError(AnalysisError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RegistrationError(AnalysisError):
    pass


class CalibrationError(AnalysisError):
    pass


class IndeterminateError(AnalysisError):
    def __init__(self, message, reason=None):
        super().__init__(message)
        self.reason = reason


class NoObjectsError(AnalysisError):
    pass
