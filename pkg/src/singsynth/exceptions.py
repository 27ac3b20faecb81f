"""Exception hierarchy shared by every stage of the pipeline."""


class SingSynthError(Exception):
    """Base class; the CLI turns these into a machine-readable error line."""

    code = "error"


class ScoreParseError(SingSynthError, ValueError):
    code = "parse_error"


class ScoreValidationError(SingSynthError, ValueError):
    code = "validation_error"


class PitchRangeError(SingSynthError, ValueError):
    code = "range_error"


class PhonemeError(SingSynthError, ValueError):
    code = "phoneme_error"


class IntervalError(SingSynthError, ValueError):
    code = "interval_error"


class AlignmentError(SingSynthError, ValueError):
    code = "alignment_error"


class FormatError(SingSynthError, ValueError):
    code = "format_error"


class ShapeError(SingSynthError, ValueError):
    code = "shape_error"


class ConfigError(SingSynthError, ValueError):
    code = "config_error"
