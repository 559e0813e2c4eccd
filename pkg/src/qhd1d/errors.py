"""Exception hierarchy.

Every failure raised by the library derives from :class:`QHDError`.  The CLI
maps :class:`ValidationError` subclasses to exit code 2 and
:class:`NumericalFailure` subclasses to exit code 3.
"""


class QHDError(Exception):
    """Base class; ``code`` is a stable machine-readable tag."""

    code = "qhd_error"


class ValidationError(QHDError, ValueError):
    code = "validation"


class NumericalFailure(QHDError, RuntimeError):
    code = "numerical_failure"


class ConfigError(ValidationError):
    code = "config"


class GridTooCoarse(ValidationError):
    code = "grid_too_coarse"


class NonPositiveDensity(ValidationError):
    code = "non_positive_density"


class ConditionsViolated(ValidationError):
    code = "conditions_violated"


class DegenerateDensity(NumericalFailure):
    code = "degenerate_density"


class SingularSystem(NumericalFailure):
    code = "singular_system"


class DivergedIteration(NumericalFailure):
    code = "diverged_iteration"


class MaxIterExceeded(NumericalFailure):
    code = "max_iter_exceeded"


class ContinuationStalled(NumericalFailure):
    code = "continuation_stalled"


class ZeroDelta0(NumericalFailure):
    code = "zero_delta0"


class DensityCollapse(NumericalFailure):
    code = "density_collapse"


class LinearSolveFailure(NumericalFailure):
    code = "linear_solve_failure"


class ZeroBeta1(NumericalFailure):
    code = "zero_beta1"


class InsufficientSamples(NumericalFailure):
    code = "insufficient_samples"


class NonPositiveNorm(NumericalFailure):
    code = "non_positive_norm"


class IoFailure(QHDError, OSError):
    code = "io_failure"
