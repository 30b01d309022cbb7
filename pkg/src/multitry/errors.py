"""Exception types shared across the package."""


class MultitryError(Exception):
    """Base class for all package-specific errors."""


class DecompositionError(MultitryError):
    """A matrix factorization failed (not symmetric positive definite)."""


class DimensionMismatchError(MultitryError):
    """Operands have incompatible shapes."""


class InvalidParameterError(MultitryError):
    """A density or sampler was handed parameters outside its domain."""


class ConstantSeriesError(MultitryError):
    """Autocorrelation requested for a series with zero variance."""


class DegenerateDensityError(MultitryError):
    """A density evaluation point is incompatible with the kernel geometry."""


class DegenerateDirectionError(MultitryError):
    """A direction vector has (numerically) zero norm."""


class StuckTrialError(MultitryError):
    """Every candidate weight in a selection step is zero."""


class ConfigValidationError(MultitryError):
    """One or more configuration constraints are violated.

    ``violations`` lists every failed constraint, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SamplerRuntimeError(MultitryError):
    """An unrecoverable numerical failure inside a sampling run."""


class NumericalOverflowError(MultitryError):
    """A computed quantity left the finite floating-point range."""


class OverlappingModesError(MultitryError):
    """Mode-occupancy regions overlap, so fractions would be ambiguous."""
