"""Exception hierarchy shared across the pipeline."""


class SpecmerError(Exception):
    """Base class for all pipeline errors."""


class FormatError(SpecmerError):
    """Malformed container or file structure."""


class UnsupportedCodecError(SpecmerError):
    """Valid container but an encoding we do not decode."""


class EmptyAudioError(SpecmerError):
    """Audio file with a zero-length data payload."""


class AliasingError(SpecmerError):
    """Requested tone frequency at or above Nyquist."""


class SegmentTooShortError(SpecmerError):
    """Audio shorter than one analysis window."""


class ShapeError(SpecmerError):
    """Tensor/layer dimension mismatch."""


class ConfigError(SpecmerError):
    """Invalid or inconsistent configuration."""


class DivergenceError(SpecmerError):
    """Training cost became non-finite."""


class StateError(SpecmerError):
    """Forward cache does not match the model it is used with."""


class ManifestError(SpecmerError):
    """Malformed manifest line; carries the line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class AnnotationError(SpecmerError):
    """Invalid listener-score annotation."""


class RangeError(SpecmerError):
    """Segment timestamps outside the audio duration."""


class CorpusTooSmallError(SpecmerError):
    """Fewer items than cross-validation folds."""
