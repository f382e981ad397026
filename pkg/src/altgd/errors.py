"""Exception types raised across the package."""


class AltGDError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(AltGDError, ValueError):
    pass


class DimensionMismatch(AltGDError, ValueError):
    pass


class NonFiniteEntry(AltGDError, ValueError):
    pass


class NotPositiveDefinite(AltGDError, ValueError):
    pass


class SingularTransform(AltGDError, ValueError):
    pass


class NotAnEquilibrium(AltGDError, ValueError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class NoConvergence(AltGDError, RuntimeError):
    """Power iteration hit its cap; ``estimate`` holds the best value seen."""

    def __init__(self, message, estimate, iterations):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


class MissingDuplicates(AltGDError, ValueError):
    pass


class CacheShapeMismatch(AltGDError, ValueError):
    pass


class IncompatibleAlgorithm(AltGDError, ValueError):
    pass


class InvalidBudget(AltGDError, ValueError):
    pass


class DivergenceDetected(AltGDError, ArithmeticError):
    """A strategy component left the finite guard region.

    ``iteration`` is the first iteration whose state tripped the guard and
    ``last_state`` the last state that did not (a :class:`JointState`).
    """

    def __init__(self, message, iteration, last_state, threshold, metadata=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_state = last_state
        self.threshold = threshold
        self.metadata = dict(metadata or {})

    def to_dict(self):
        payload = {
            "error": "DivergenceDetected",
            "message": str(self),
            "iteration": self.iteration,
            "threshold": self.threshold,
            "last_finite_iteration": self.iteration - 1,
        }
        if self.last_state is not None:
            payload["last_state"] = self.last_state.to_dict()
        if self.metadata:
            payload["metadata"] = self.metadata
        return payload


# A non-finite state is reported through the same channel as a guard trip.
NonFiniteState = DivergenceDetected


class WrongGameClass(AltGDError, ValueError):
    pass


class MissingHalfStates(AltGDError, ValueError):
    pass


class EmptyHorizons(AltGDError, ValueError):
    pass


class InsufficientSamples(AltGDError, ValueError):
    pass


class UnknownName(AltGDError, KeyError):
    pass
