"""Exception types raised by edpauli."""


class EdPauliError(Exception):
    """Base class for all library errors."""


class StructuralError(EdPauliError, ValueError):
    """Shapes, grids or axes do not fit together."""


class DomainError(EdPauliError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(EdPauliError):
    """A caller-supplied object violates an operation's contract."""


class NumericalError(EdPauliError, RuntimeError):
    """An iterative method failed to converge.

    The offending residual is kept on ``residual`` for reporting.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ValidationError(EdPauliError, ValueError):
    """A scenario configuration failed validation.

    ``errors`` holds every problem found, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
