"""Exception types shared across the package."""


class PivflowError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(PivflowError, ValueError):
    """Inputs have missing, mismatched, or too-small dimensions."""


class IllConditionedTensorError(PivflowError):
    """Structure tensor too ill-conditioned to invert at the requested point."""


class WindowOutOfBoundsError(PivflowError, ValueError):
    """Template or search window does not fit inside the frame."""


class ZeroVarianceError(PivflowError, ValueError):
    """Flat template has no texture, so its correlation score is undefined."""


class EmptyMaskError(PivflowError, ValueError):
    """No pixel is valid in both fields being compared."""


class FlowFormatError(PivflowError, ValueError):
    """Flow file is malformed: bad magic, truncated payload, or bad dimensions."""


class SequenceError(PivflowError, ValueError):
    """Image sequence cannot be loaded as a valid grayscale frame series."""


class ConfigError(PivflowError, ValueError):
    """Invalid configuration or parameter block."""
