"""Exception and warning types raised by lspline."""


class LSplineError(Exception):
    """Base class for all library errors."""


class RootFindingFailure(LSplineError):
    """Characteristic polynomial roots could not be refined to tolerance."""


class SingularWronskian(LSplineError):
    """The Wronskian matrix is numerically singular at some queried point."""


class QuadratureFailure(LSplineError):
    """Adaptive quadrature exhausted its panel budget before reaching tolerance."""


class BoundaryViolation(LSplineError):
    """A test function does not satisfy f^(j)(a) = 0 for j < m."""


class RankDeficientT(LSplineError):
    """The null-space design matrix T does not have full column rank."""


class SingularM(LSplineError):
    """M = K + lambda D^-1 is numerically singular."""


class DegenerateBlock(LSplineError):
    """A local (m+1) x m block of T is rank deficient."""


class NotPointEval(LSplineError):
    """The banded solver was handed a non point-evaluation functional."""


class CholeskyFailure(LSplineError):
    """The banded matrix Q'MQ is not numerically positive definite."""


class NonConvergence(LSplineError):
    """An iterative solver stopped before meeting its convergence criterion."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class SeparationWarning(UserWarning):
    """Fitted logits grew large enough to suggest (quasi-)separation."""


class SingularGram(LSplineError):
    """sigma^2 I + S cannot be factored (only possible when sigma^2 = 0)."""
