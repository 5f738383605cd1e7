"""Exception hierarchy.

Validation problems (bad input files, violated preconditions) derive from
:class:`ValidationError`; numerical degeneracies that a longer horizon or a
different seed may cure derive from :class:`DegeneracyError`.  The CLI maps
the two families to distinct exit codes.
"""


class FlagdimError(Exception):
    """Base class for all package errors."""


class ValidationError(FlagdimError, ValueError):
    """Input does not satisfy a documented precondition."""


class DimensionMismatchError(ValidationError):
    pass


class MeasureError(ValidationError):
    """Malformed or invalid step distribution."""


class TopologyError(ValidationError):
    pass


class DegeneracyError(FlagdimError, ArithmeticError):
    """A numerical object is too close to degenerate to be trusted."""


class UndefinedAngleError(DegeneracyError):
    pass


class IllConditionedSplittingError(DegeneracyError):
    pass


class GeneralPositionError(DegeneracyError):
    """Subspaces failed a general-position test.

    Usually retryable: Monte Carlo flags at short horizons can be nearly
    degenerate, so increasing the horizon (or changing seed) tends to help.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class FiberMembershipError(DegeneracyError):
    pass


class InconsistencyError(FlagdimError, RuntimeError):
    """An internal invariant that should be impossible to break was broken."""
