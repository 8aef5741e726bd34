"""Exception types shared across the package."""


class ConfbbError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(ConfbbError):
    """An argument is outside its admissible range (empty input, alpha <= 0, ...)."""


class ShapeError(ConfbbError):
    """Array dimensions do not match what an operation requires."""


class SingularFit(ConfbbError):
    """The (weighted) normal equations are singular and no ridge term is present."""


class ConvergenceFailure(ConfbbError):
    """Iterative fitting stopped at the iteration cap above tolerance."""

    def __init__(self, grad_norm: float, message: str | None = None):
        self.grad_norm = float(grad_norm)
        super().__init__(message or f"optimizer did not converge (gradient norm {grad_norm:.3e})")


class IllConditioned(ConfbbError):
    """Hessian factorization failed even after damping escalation."""


class DomainError(ConfbbError):
    """A query point lies outside a benchmark function's domain box."""


class UnsupportedModel(ConfbbError):
    """The operation is only defined for a different model kind."""
