"""Exception types shared across the estimation pipeline."""


class SicopulaError(Exception):
    """Base class for all library errors."""


class EmptyWindowError(SicopulaError):
    """No observation carries positive kernel mass at the evaluation point."""


class InsufficientSupportError(SicopulaError):
    """Fewer than two observations with nonzero weight in a tau window."""


class InsufficientDataError(SicopulaError):
    """Too few kept observations to identify the index parameter."""


class NonFiniteCriterionError(SicopulaError):
    """The pseudo-likelihood criterion hit a non-finite log density.

    Carries the (original, 0-based) row index that produced it.
    """

    def __init__(self, row: int, message: str = ""):
        self.row = row
        super().__init__(message or f"non-finite log density at row {row}")


class SingularHessianError(SicopulaError):
    """Estimated criterion Hessian is numerically singular."""
