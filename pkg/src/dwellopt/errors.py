"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Unknown benchmark name or malformed benchmark data entry."""


class UnsupportedRelaxationError(ValueError):
    """Requested relaxation is undefined for the given problem."""


class IntegrationDivergedError(RuntimeError):
    """Non-finite state encountered during propagation.

    Carries the mode index and RK4 step at which the blow-up was detected.
    """

    def __init__(self, message: str, mode: int | None = None, step: int | None = None):
        super().__init__(message)
        self.mode = mode
        self.step = step


class LayoutError(ValueError):
    """Vector dimensions inconsistent with a transcription's variable layout."""


class InfeasibleAllocationError(ValueError):
    """Node budget too small to give every mode at least one node."""


class DegenerateSequenceError(RuntimeError):
    """Sequence reduction removed every mode; nothing left to carry the horizon."""


class IstoAbortError(RuntimeError):
    """Inner solve diverged during the homotopy; carries the partial trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
