"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Vector or matrix shapes do not agree."""


class SingularResolventError(ArithmeticError):
    """A resolvent denominator (or 2x2 capacitance) vanished at some frequency bin."""

    def __init__(self, message, bin_index=None, magnitude=None):
        super().__init__(message)
        self.bin_index = bin_index
        self.magnitude = magnitude


class NotControllableError(ValueError):
    """The Krylov matrix of (A, B) is numerically singular."""

    def __init__(self, ratio):
        super().__init__(
            f"(A, B) is not controllable: Krylov singular-value ratio "
            f"{ratio:.3e} is below 1e-10"
        )
        self.ratio = ratio


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold."""


class DataError(ValueError):
    """Input data could not be parsed or is unusable (e.g. zero variance)."""


class MissingFeedbackError(ValueError):
    """A closed-loop operation was requested on an SSM without K."""
