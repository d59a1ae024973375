"""Exception types raised by affuq."""


class AffuqError(Exception):
    """Base class for all affuq-specific errors."""


class UndefinedMetricError(AffuqError, ValueError):
    """A metric has no defined value for the given input (e.g. empty set,
    zero denominator, all-zero error vector)."""


class ConfigError(AffuqError, ValueError):
    """A configuration file or value is invalid (unknown key, bad type,
    out-of-range value, unreadable file)."""


class InfeasibleConfigError(AffuqError, ValueError):
    """A configuration cannot be realised (e.g. mask generation with too few
    units for the requested number of groups)."""


class DatasetFormatError(AffuqError, ValueError):
    """A dataset or observations file violates the JSON schema.

    The message carries the path of the offending field, e.g.
    ``frames[3].passes[1][0].mask.rows``.
    """


class FrameAlignmentError(AffuqError, ValueError):
    """Two files that should describe the same frames do not (missing or
    mismatched frame ids)."""
