"""Exception and warning types.

Two families matter to callers: :class:`ValidationError` for bad input or
configuration, and :class:`NumericalError` for factorizations and fits that
cannot be carried out on otherwise valid input. The CLI maps them to exit
codes 2 and 3.
"""


class StabGKnockError(Exception):
    """Base class; ``stage`` is filled in by the pipeline when it re-raises."""

    stage = None

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class ValidationError(StabGKnockError, ValueError):
    pass


class NumericalError(StabGKnockError, ArithmeticError):
    pass


class DegenerateKnots(ValidationError):
    pass


class RankDeficient(NumericalError):
    pass


class ZeroColumn(NumericalError):
    def __init__(self, j, norm=0.0):
        super().__init__(
            f"column {j} has projected norm {norm:.3g}; it is indistinguishable "
            "from the nonparametric component"
        )
        self.j = j


class ZeroVariance(NumericalError):
    def __init__(self, j):
        super().__init__(f"column {j} has zero variance")
        self.j = j


class SingularGram(NumericalError):
    pass


class CholeskyFailure(NumericalError):
    pass


class DimensionError(ValidationError):
    pass


class BadVariance(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class ScreeningTooAggressive(ValidationError):
    pass


class MissingRanking(ValidationError):
    pass


class MissingColumn(ValidationError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class NonNumericCell(ValidationError):
    def __init__(self, row, col, value):
        super().__init__(f"non-numeric value {value!r} at row {row}, column {col!r}")
        self.row = row
        self.col = col


class MissingValue(ValidationError):
    def __init__(self, row, col):
        super().__init__(f"missing value at row {row}, column {col!r}")
        self.row = row
        self.col = col


class SchemaVersionError(ValidationError):
    pass


class ExperimentFailed(StabGKnockError, RuntimeError):
    """More than the tolerated share of replicates raised."""


class NoConvergence(RuntimeWarning):
    """Solver hit its iteration cap; the best iterate is returned."""


class RankDeficientSupport(RuntimeWarning):
    """Least-squares refit on a collinear support fell back to a pseudo-inverse."""


class DegenerateKnockoff(RuntimeWarning):
    """Knockoff construction degraded (s = 0 or eigenvalue clipping)."""
