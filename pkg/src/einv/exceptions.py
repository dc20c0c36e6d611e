"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`EinvError`
so callers can catch package failures without masking programming errors.
"""


class EinvError(Exception):
    """Base class for all package errors."""


class DataError(EinvError, ValueError):
    """Invalid input data."""


class MissingColumn(DataError):
    pass


class NonFiniteValue(DataError):
    def __init__(self, row, column=None):
        self.row = row
        self.column = column
        where = f" (column {column!r})" if column else ""
        super().__init__(f"non-finite value in row {row}{where}")


class PropensityOutOfRange(DataError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"propensity {value!r} in row {row} is outside (0, 1]")


class TreatmentOutOfRange(DataError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"treatment code {value!r} in row {row} is invalid")


class IndexOutOfRange(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingPropensity(DataError):
    pass


class SingleEnvironment(DataError):
    pass


class MultiLevelTreatmentUnsupported(DataError):
    pass


class EnvironmentTooSmall(DataError):
    pass


class TestSampleTooSmall(DataError):
    __test__ = False  # keep pytest from collecting this class


class UnknownEnvironment(EinvError, KeyError):
    pass


class DegeneratePolicy(EinvError, ValueError):
    pass


class UnsupportedSubset(EinvError, ValueError):
    pass


class EmptyClass(EinvError, ValueError):
    pass


class EmptyModelList(EinvError, ValueError):
    pass


class TooManyCandidates(EinvError, ValueError):
    pass


class NumericalError(EinvError, ArithmeticError):
    """Base for failures of the numerical kernel."""


class RankDeficient(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class InvalidDof(NumericalError, ValueError):
    pass


class EmptyTrainingSet(NumericalError, ValueError):
    pass


class SeparableData(NumericalError):
    pass


class DidNotConverge(NumericalError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class PropensityUnderflow(NumericalError):
    pass


class SingularProductCovariance(SingularCovariance):
    """Covariance of the GCM residual products is singular."""
