"""Exception hierarchy shared by all modules."""


class QLCError(Exception):
    """Base class for every error raised by this package."""


class DomainError(QLCError, ValueError):
    """An argument lies outside the domain where the computation is defined."""


class NumericalError(QLCError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class ConvergenceError(NumericalError):
    """An iterative procedure stopped before meeting its tolerance."""


class NonConvergence(ConvergenceError):
    """Series truncation reached its term limit before the tolerance."""


class NoConvergence(ConvergenceError):
    """The closed-loop fixed-point solver did not converge."""


class QuadratureFailure(ConvergenceError):
    """Adaptive quadrature could not reach the requested accuracy."""


class NotHurwitz(NumericalError):
    """A state matrix that must be stable has an eigenvalue with Re >= 0."""


class SingularSystem(NumericalError):
    """A linear system that must be solved is numerically singular."""


class NonStrictlyProper(DomainError):
    """A system with direct feedthrough was given where D = 0 is required."""


class IllPosed(NumericalError):
    """The algebraic loop through the actuator has no unique solution."""


class Diverged(NumericalError):
    """A time-domain simulation blew up."""


class DegenerateMetric(NumericalError):
    """A normalised metric has a vanishing normaliser."""


class EvaluationFailed(QLCError):
    """An objective evaluation failed; carries the underlying reason."""


class AllEvaluationsFailed(QLCError):
    """No point of an optimisation grid produced a finite objective."""
