"""Exception hierarchy shared across the package."""


class SwitchLabError(Exception):
    """Base class for all package errors."""


class DomainError(SwitchLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ExprSyntaxError(SwitchLabError, ValueError):
    """Expression text failed to parse; carries the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class ExprKindError(SwitchLabError, ValueError):
    """An expression uses symbols not available for its declared kind."""


class EvalError(SwitchLabError, ArithmeticError):
    """Expression evaluation hit an undefined operation (e.g. division by zero)."""


class KernelError(SwitchLabError, ValueError):
    """A rate kernel violated one of its invariants (negative rate, bad support)."""


class ModelError(SwitchLabError, ValueError):
    """A model definition is inconsistent or incomplete."""


class ExplosionGuardError(SwitchLabError, RuntimeError):
    """The simulated segment norm exceeded the configured hard cap."""


class AssemblyError(SwitchLabError, ValueError):
    """An elliptic system failed an assembly-time invariant."""


class ConvergenceError(SwitchLabError, RuntimeError):
    """An iterative solver did not converge; carries diagnostic trace when available."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(SwitchLabError, ValueError):
    """Experiment configuration failed validation; message lists field paths."""
