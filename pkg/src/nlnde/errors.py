"""Exception hierarchy shared across the package."""


class NlndeError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(NlndeError):
    """A file or record does not follow its declared format."""


class SpanAlignmentError(NlndeError):
    """An annotation span cannot be aligned with token boundaries."""


class ConfigError(NlndeError):
    """Inconsistent or incomplete run configuration."""


class ModelFileError(NlndeError):
    """A saved model file is unreadable, corrupted, or of the wrong version."""


class TrainingError(NlndeError):
    """Optimization produced a non-finite loss or gradient."""


class UsageError(NlndeError):
    """Command-line misuse (bad flags, wrong command for the given model)."""
