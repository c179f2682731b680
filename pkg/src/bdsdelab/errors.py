"""Exception hierarchy.

Every error raised by the library derives from one of two roots so the CLI can
map it to an exit code: :class:`ValidationError` (bad input, exit 2) or
:class:`NumericalError` (a computation that could not be completed, exit 3).
"""

from __future__ import annotations


class LabError(Exception):
    """Root of all library errors."""


class ValidationError(LabError, ValueError):
    """Input rejected before or during validation."""


class NumericalError(LabError, ArithmeticError):
    """A numerical procedure failed."""


# paths
class EmptyLevy(ValidationError):
    """A Levy specification without atoms was supplied."""


class GridMismatch(ValidationError):
    """Two objects that must share a time grid do not."""


# expression language
class ExprSyntaxError(ValidationError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifier(ValidationError):
    """A name that is neither a declared variable nor a known function."""

    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class UnboundVariable(ValidationError):
    """Evaluation was attempted without a binding for a free variable."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound")


class EvalError(NumericalError):
    """Evaluation produced a non-finite value or left a function's domain."""


# reflection
class JumpLeavesDomain(NumericalError):
    """A realized jump displaced the state outside the closed domain."""


class ProjectionFailure(NumericalError):
    """Root finding along the normal did not reach the boundary."""


# backward solvers
class BudgetTooSmall(ValidationError):
    """Monte Carlo budget too small for the requested estimator."""


class NoConvergence(NumericalError):
    """Picard iteration hit ``max_iter``; ``residual`` holds the last norm."""

    def __init__(self, max_iter: int, residual: float):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(f"no convergence after {max_iter} iterations (residual {residual:.3e})")


class RegressionSingular(NumericalError):
    """Regression design has no usable rank."""


# Doss-Sussmann
class OutOfHull(NumericalError):
    """Query point outside the interpolation lattice."""


class GDependsOnState(ValidationError):
    """The backward coefficient g references y, z or j where only (t, x) is allowed."""


# control
class DerivativeAtKink(NumericalError):
    """Finite differences produced a non-finite slope."""


# finite differences
class StabilityViolation(ValidationError):
    """The requested time step breaks the documented stability bound."""


class BoundaryNewtonFailure(NumericalError):
    """The scalar Neumann closure could not be solved at a boundary node."""


class ConfigError(ValidationError):
    """Configuration file failed schema validation."""
