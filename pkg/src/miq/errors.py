"""Exception hierarchy shared by the library and the CLI."""


class MiqError(Exception):
    """Base class for all errors raised by miq."""


class InvalidOrderError(MiqError, ValueError):
    """Modulation order not supported by a constellation builder."""


class DomainError(MiqError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(MiqError, ValueError):
    """Inconsistent or insufficient configuration."""


class NotFoundError(MiqError, KeyError):
    """Requested entry is absent from a coefficient table."""

    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class ParseError(MiqError, ValueError):
    """Malformed coefficient or manifest file."""


class NumericalError(MiqError, ArithmeticError):
    """Linear system could not be solved (e.g. singular damped normal matrix)."""


class NonConvergenceError(MiqError, RuntimeError):
    """Every start of a fit diverged.

    The best-effort result (possibly ``None``) is kept on ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
