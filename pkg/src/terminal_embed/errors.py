"""Exception hierarchy shared by all modules."""


class TerminalEmbedError(Exception):
    """Base class for every error raised by :mod:`terminal_embed`."""


class DegenerateInput(TerminalEmbedError, ValueError):
    """Input set is too small or fully coincident for the requested quantity."""


class DomainError(TerminalEmbedError, ValueError):
    """A numeric parameter lies outside the domain of a formula."""


class DimensionError(TerminalEmbedError, ValueError):
    """Array shapes do not agree."""


class FormatError(TerminalEmbedError, ValueError):
    """A data file does not follow its declared format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientData(TerminalEmbedError, ValueError):
    """A class has fewer members than a split requires."""

    def __init__(self, label, available, required):
        super().__init__(
            f"class {label!r} has {available} members, split needs {required}"
        )
        self.label = label
        self.available = available
        self.required = required


class InfeasibleError(TerminalEmbedError):
    """The extension program has no feasible point even after relaxing eps.

    Attributes
    ----------
    best_residual : float
        Smallest normalized constraint violation reached.
    eps_used : float
        Slack of the last attempt.
    best_y_prime : numpy.ndarray or None
        Least-violating candidate (inside the ball), usable as a fallback.
    """

    def __init__(self, message, best_residual, eps_used, best_y_prime=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.eps_used = eps_used
        self.best_y_prime = best_y_prime


class NumericalError(TerminalEmbedError, ArithmeticError):
    """Floating point results violate an identity beyond tolerance."""
