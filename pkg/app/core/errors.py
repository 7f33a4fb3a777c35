"""
Domain exceptions.

Each exception carries the CLI exit code it maps to: configuration and
precondition problems exit with 2, numerical invariant violations with 3.
"""


class VolterraError(Exception):
    exit_code: int = 1


class ConfigurationError(VolterraError, ValueError):
    """Invalid input, rejected before or at the start of a computation."""
    exit_code = 2


class InvariantViolation(VolterraError, ArithmeticError):
    """A numerical invariant failed during a computation."""
    exit_code = 3


class GridError(ConfigurationError):
    pass


class LevyModelError(ConfigurationError):
    pass


class ChaosSpecError(ConfigurationError):
    pass


class MarketSpecError(ConfigurationError):
    pass


class PresetError(ConfigurationError):
    pass


class HorizonError(ConfigurationError):
    """Donsker field requested at or beyond the insider horizon."""


class MarkSupportError(ConfigurationError):
    pass


class ControlBoundsError(ConfigurationError):
    pass


class BracketError(ConfigurationError):
    pass


class XDependenceError(ConfigurationError):
    """Coefficients depend on the state where an x-free model is required."""


class JumpModelError(ConfigurationError):
    """Jump-active model passed to a no-jump computation."""


class FarTailError(InvariantViolation):
    pass


class QuadratureError(InvariantViolation):
    pass


class SolverDivergenceError(InvariantViolation):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class RegressionError(InvariantViolation):
    pass


class NegativeWealthError(InvariantViolation):
    pass


class DiagnosticMismatch(InvariantViolation):
    pass
