"""Exception types shared across the package."""


class AghError(Exception):
    """Base class for all package errors."""


class InfeasibleError(AghError):
    """A sub-problem, window, or episode admits no feasible continuation."""


class InvalidActionError(AghError):
    """An env step was attempted with a masked or unknown action."""


class SizeLimitError(AghError):
    """An exact solver was called above its configured size limit."""


class FormatError(AghError):
    """A serialized document (JSON, LP, solution text, config) is malformed."""


class SolverContractError(AghError):
    """A sub-solver returned routes that do not replay feasibly."""
