"""Exception hierarchy shared by the solver pipeline."""


class GeneoError(Exception):
    """Base class. ``where`` names the subdomain, coarse space or sweep point involved."""

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{message} [{where}]"
        super().__init__(message)


class DimensionMismatch(GeneoError, ValueError):
    pass


class StructurallySingular(GeneoError):
    pass


class NumericallySingular(GeneoError):
    pass


class DimensionTooLarge(GeneoError):
    pass


class NoConvergence(GeneoError):
    pass


class ShiftSingular(GeneoError):
    pass


class OutOfDomain(GeneoError, ValueError):
    pass


class TooCoarse(GeneoError, ValueError):
    pass


class NotPerfectSquare(GeneoError, ValueError):
    pass


class SubdomainTooSmall(GeneoError):
    pass


class BadSubdomainIndex(GeneoError, IndexError):
    pass


class CoarseSingular(GeneoError):
    pass


class SubdomainSingular(GeneoError):
    pass


class MaxItersExceeded(GeneoError):
    pass


class Breakdown(GeneoError):
    pass


class ParseError(GeneoError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    pass


class IndexOutOfRange(GeneoError, IndexError):
    pass
