"""Exception hierarchy.

Validation errors (bad input, broken invariants) derive from
:class:`ValidationError`; failures of the numerics derive from
:class:`NumericalError`. The command line maps the two families to distinct
exit codes.
"""


class ShapeConnError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(ShapeConnError, ValueError):
    pass


class NumericalError(ShapeConnError, ArithmeticError):
    pass


# pedigree
class MissingParent(ValidationError):
    pass


class CycleDetected(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class MzGroupParentMismatch(ValidationError):
    pass


class InvalidProportions(ValidationError):
    pass


# spd geometry
class NotPositiveDefinite(NumericalError):
    def __init__(self, min_eigenvalue, msg=None):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            msg or f"matrix is not positive definite (min eigenvalue {self.min_eigenvalue:.3e})"
        )


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class DegenerateChannel(NumericalError):
    def __init__(self, region):
        self.region = region
        super().__init__(f"channel {region!r} has zero variance")


# lddmm
class DegenerateConfiguration(ValidationError):
    pass


class NonFiniteState(NumericalError):
    pass


class NoDescent(NumericalError):
    pass


# tangent statistics
class RankDeficientDesign(ValidationError):
    def __init__(self, columns, msg=None):
        self.columns = list(columns)
        super().__init__(msg or f"design matrix is rank deficient; collinear columns: {self.columns}")


class TruncationTooLarge(NumericalError):
    pass


# variance components
class KNotPSD(ValidationError):
    pass


class DesignRankDeficient(ValidationError):
    pass


class SingularRowCovariance(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class IdentifiabilityWarning(UserWarning):
    """Genetic and environmental components cannot be separated by the data."""


# cca
class BlockNotPD(NumericalError):
    pass


class TooManyModes(ValidationError):
    pass


# pipeline
class StageError(ShapeConnError):
    """A pipeline stage failed; ``cause`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
