"""Exception types raised across the package."""


class OjaflowError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(OjaflowError, ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class SymmetryError(OjaflowError, ValueError):
    """A matrix required to be symmetric is not, within tolerance.

    Carries the measured relative symmetry defect in ``defect``.
    """

    def __init__(self, message, defect):
        super().__init__(f"{message} (relative symmetry defect {defect:.3e})")
        self.defect = defect


class ConvergenceError(OjaflowError, RuntimeError):
    """An iterative kernel exhausted its iteration budget."""


class PivotError(OjaflowError, ArithmeticError):
    """A factorization hit a non-positive pivot.

    ``pivot`` is the 1-based index of the failing pivot in the output
    factor's row/column numbering.
    """

    def __init__(self, pivot, value):
        super().__init__(
            f"non-positive pivot {value:.3e} at position {pivot}; "
            "matrix is not numerically positive definite"
        )
        self.pivot = pivot
        self.value = value


class RankDeficiencyError(OjaflowError, ValueError):
    """Column set is numerically rank deficient.

    ``column`` is the 1-based index of the first dependent column.
    """

    def __init__(self, column):
        super().__init__(f"column {column} is numerically dependent on its predecessors")
        self.column = column


class ConditioningError(OjaflowError, ValueError):
    """Requested evaluation exceeds the double-precision conditioning budget.

    ``advised_max`` is the largest argument for which the evaluation is
    considered trustworthy.
    """

    def __init__(self, message, advised_max=None):
        if advised_max is not None:
            message = f"{message} (advised maximum: {advised_max:.6g})"
        super().__init__(message)
        self.advised_max = advised_max


class MetricDegeneracyError(OjaflowError, ArithmeticError):
    """The Lyapunov-based metric is undefined at or too near an equilibrium."""


class SigmaAmbiguityError(OjaflowError, ArithmeticError):
    """All candidate pivots at one stage of the column-permutation scan fell
    below the numerical threshold.

    ``stage`` is the 1-based row index at which the scan became ambiguous.
    """

    def __init__(self, stage, best):
        super().__init__(
            f"all candidate subdeterminants at stage {stage} are below tolerance "
            f"(best relative magnitude {best:.3e})"
        )
        self.stage = stage
        self.best = best


class IntegrationError(OjaflowError, RuntimeError):
    """The integrator aborted (non-finite state or orthogonality blow-up)."""


class DivergenceError(OjaflowError, RuntimeError):
    """A stochastic iteration produced a non-finite or unbounded iterate.

    ``step`` is the last finite iteration count.
    """

    def __init__(self, message, step):
        super().__init__(f"{message} (last finite step: {step})")
        self.step = step


class ConfigError(OjaflowError, ValueError):
    """Invalid experiment configuration; the message names the field."""
