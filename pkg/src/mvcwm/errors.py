"""Exception hierarchy.

``NumericalError`` subclasses signal a failed fit or a degenerate estimate;
the CLI maps them to exit code 2.  Everything else derived from
``MvcwmError`` is an input or usage problem.
"""


class MvcwmError(Exception):
    """Base class for all package errors."""


class NumericalError(MvcwmError):
    """A numerical procedure could not produce a valid result."""


class CholeskyFailure(NumericalError):
    """A matrix expected to be positive definite is not."""


class DegenerateData(CholeskyFailure):
    """A covariance update stayed singular after ridge repair."""


class DegenerateScale(NumericalError):
    """Identifiability normalization hit a non-positive leading element."""


class EmptyCluster(NumericalError):
    """A component's responsibility mass fell below the usable minimum."""

    def __init__(self, component, mass, threshold):
        self.component = component
        self.mass = mass
        self.threshold = threshold
        super().__init__(
            f"component {component} has mass {mass:.3g} < {threshold:.3g}"
        )


class SingularGram(NumericalError):
    """The weighted design Gram matrix of a regression update is singular."""


class AllZeroRow(NumericalError):
    """Every component density underflowed for some observation."""


class NonMonotone(NumericalError):
    """The log-likelihood decreased during an (EC)M iteration."""


class DegenerateClustering(NumericalError):
    """k-means left a cluster empty."""


class AllStrategiesFailed(NumericalError):
    """No initialization strategy produced a usable fit."""


class GMismatch(MvcwmError, ValueError):
    """Fitted and reference models have different numbers of components."""


class CrossFamilyComparison(MvcwmError, ValueError):
    """BIC values from joint and conditional likelihoods were compared."""


class DatasetError(MvcwmError, ValueError):
    """Malformed dataset file."""


class ParseError(DatasetError):
    pass


class ShapeError(DatasetError):
    pass


class DuplicateCell(DatasetError):
    pass


class ModelFileError(MvcwmError, ValueError):
    """Malformed model document."""


class VersionMismatch(ModelFileError):
    pass


class InvariantViolation(ModelFileError):
    pass
