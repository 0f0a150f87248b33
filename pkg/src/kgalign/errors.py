"""Exception types shared across the toolkit."""


class KgAlignError(Exception):
    """Base class for all toolkit errors."""


class DataError(KgAlignError):
    """Malformed, missing or inconsistent input data."""


class NumericalError(KgAlignError):
    """Training diverged or produced non-finite values."""
