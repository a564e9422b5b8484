"""Exception and warning classes raised across the package."""


class HarmonizeError(Exception):
    """Base class for all errors raised by harmonize."""


class DimensionError(HarmonizeError, ValueError):
    pass


class EmptyInputError(HarmonizeError, ValueError):
    pass


class ModeError(HarmonizeError, ValueError):
    """A context composition mode is missing an operand or is not accepted."""


class EmptyContextError(HarmonizeError, ValueError):
    pass


class DualShapeError(HarmonizeError, ValueError):
    """The main and donor passes disagree on latent geometry."""


class MaskError(HarmonizeError, ValueError):
    pass


class ParameterError(HarmonizeError, ValueError):
    pass


class StepError(HarmonizeError, ValueError):
    pass


class ConfigurationError(HarmonizeError, ValueError):
    pass


class MissingRecordError(HarmonizeError, LookupError):
    pass


class ReportError(HarmonizeError, ValueError):
    pass


class HarmonizeWarning(UserWarning):
    """Base class for diagnostics that are reported but never fatal."""


class EmptyMaskWarning(HarmonizeWarning):
    """A binarized subject mask or a scoring mask selected no pixels."""


class ProjectionCollapseWarning(HarmonizeWarning):
    """A visual token lost (almost) all of its norm to the textual subspace."""


class SwapSkippedWarning(HarmonizeWarning):
    """A swap step had no cross-attention history to derive a mask from."""
