"""Exception hierarchy shared by every module of the package."""


class PaseError(Exception):
    """Base class for all errors raised by :mod:`pase`."""


class DimensionError(PaseError, ValueError):
    """Operand shapes are inconsistent."""


class IndefiniteError(PaseError):
    """An operator expected to be positive definite is not."""


class SingularityError(PaseError):
    """A corner block that must be inverted is singular."""


class MeshError(PaseError):
    """Degenerate or inconsistent mesh data."""


class NestingError(PaseError):
    """Two finite element spaces are not nested."""


class ShiftProximityError(PaseError):
    """The shift sits (numerically) on an eigenvalue of the pencil."""


class DegenerateInputError(PaseError):
    """A block of vectors collapsed in rank."""


class CaptureError(PaseError):
    """A batch could not capture its target eigenpairs."""


class CriterionUndefinedError(PaseError):
    """The relative residual criterion is undefined for a zero eigenvalue."""


class ConfigError(PaseError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__("%s: %s" % (key, message))
        self.key = key


class MatrixMarketError(PaseError):
    """Malformed Matrix Market input."""
