"""Exception hierarchy shared by every module of the package."""


class DccAlError(Exception):
    """Base class for all package errors."""


class IngestError(DccAlError, ValueError):
    """Malformed or incomplete input data."""


class DimError(DccAlError, ValueError):
    """Mismatched array dimensions."""


class DomainError(DccAlError, ValueError):
    """Argument outside the mathematical domain of a function."""


class InfeasibleError(DccAlError):
    """No feasible point was found (optimizer or constraint set)."""


class FitError(DccAlError):
    """Model estimation failed.

    The ``stage`` attribute tags where the failure happened (``"stage1"``,
    ``"stage2"`` or ``None``).
    """

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class InfeasibleParams(DccAlError, ValueError):
    """Parameter vector outside the admissible region of a recursion."""


class InitError(DccAlError, ValueError):
    """Invalid initial state for a recursion."""


class RankError(DccAlError, ValueError):
    """Rank-deficient design matrix."""


class TestError(DccAlError):
    """A backtest statistic could not be computed."""

    __test__ = False


class SimError(DccAlError):
    """Simulation produced an invalid state."""


class InternalError(DccAlError):
    """An invariant guaranteed by an upstream stage was violated."""


class RankWarning(UserWarning):
    """A moment matrix may be singular."""
