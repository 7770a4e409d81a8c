"""Exceptions raised by the SHSR toolkit."""


class ShsrError(ValueError):
    """Base class for validation errors; the CLI maps these to exit code 1."""


class FormatError(ShsrError):
    """Input file does not follow the declared layout (header, columns, format tag)."""


class DuplicateRecord(ShsrError):
    """The same (dataset, configuration) pair appears more than once."""


class InvalidValue(ShsrError):
    """A value is outside its domain (non-positive performance, negative time, ...)."""


class EmptyTrainingSet(ShsrError):
    """A model was asked to fit zero rows."""


class MissingFeature(ShsrError):
    """A prediction needs a feature the input vector does not provide."""


class CIUndefined(ShsrError):
    """A confidence interval needs at least two values."""
