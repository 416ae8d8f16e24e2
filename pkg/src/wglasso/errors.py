"""Exception types shared across the package."""


class CapacityError(RuntimeError):
    """Rejection sampling exhausted its attempt budget.

    The message names the constraint that dominated the rejections.
    """


class SingularityError(ValueError):
    """A source position (numerically) coincides with an electrode."""


class RankError(ValueError):
    """Requested truncation rank exceeds the numerical rank of the matrix."""

    def __init__(self, message: str, effective_rank: int):
        super().__init__(message)
        self.effective_rank = effective_rank


class ConfigError(ValueError):
    """A run configuration failed strict validation."""
