"""Exception types shared across the package."""


class NrdfError(Exception):
    """Base class for all package errors."""


class DomainError(NrdfError, ValueError):
    """An argument lies outside the domain of the operation."""


class RangeError(DomainError):
    """The argument is valid but the quantity is not known in closed form there."""


class ConvergenceError(NrdfError, RuntimeError):
    """An iterative procedure failed to converge.

    Attributes:
        iterations: number of iterations performed.
        residual: last residual observed.
    """

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DegenerateChainError(NrdfError, RuntimeError):
    """The joint Markov chain has no unique stationary distribution."""


class InfeasibleCertificateError(DomainError):
    """A dual certificate violates its feasibility constraint.

    Attributes:
        stage: time index of the violated constraint.
        index: the offending (y_i, y^{i-1}) history, as a tuple.
        excess: amount by which the constraint exceeds 1.
    """

    def __init__(self, message, stage, index, excess):
        super().__init__(message)
        self.stage = stage
        self.index = index
        self.excess = excess


class ModelError(DomainError):
    """A state-space model violates its structural assumptions."""


class FilterDivergenceError(NrdfError, RuntimeError):
    """A simulated trajectory blew up."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
