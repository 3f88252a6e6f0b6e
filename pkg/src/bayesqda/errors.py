"""Exception types shared across the library.

Everything raised on bad data derives from DataError so the CLI can map it
to a single exit code; usage problems are handled by argparse separately.
"""


class BayesQdaError(Exception):
    """Base class for all library errors."""


class DataError(BayesQdaError):
    """Invalid data or file content (CLI exit code 2)."""


class DimensionMismatch(DataError):
    pass


class NotPositiveDefinite(DataError):
    pass


class NonPositiveDof(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptySupport(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class DuplicateClass(DataError):
    pass


class InsufficientClasses(DataError):
    pass


class InsufficientSamplesPerClass(DataError):
    pass


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedFile(DataError):
    pass
