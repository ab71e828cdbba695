"""Exception types raised across the package."""


class LinabsError(Exception):
    """Base class for all package errors."""


class NotADag(LinabsError, ValueError):
    """The support of a weight matrix contains a directed cycle."""


class ShapeMismatch(LinabsError, ValueError):
    pass


class DimensionMismatch(LinabsError, ValueError):
    pass


class NotBlockTriangular(LinabsError, ValueError):
    pass


class IndexOutOfRange(LinabsError, IndexError):
    pass


class SingularBlock(LinabsError, ValueError):
    pass


class OverlappingBlocks(LinabsError, ValueError):
    """Two concrete blocks share a variable, so the abstract model is confounded."""


class InvalidAbstraction(LinabsError, ValueError):
    """The abstraction matrix is rank deficient or has overlapping relevant sets."""


class ResampleExhausted(LinabsError, RuntimeError):
    pass


class TooManyEdges(LinabsError, ValueError):
    pass


class DegenerateColumn(LinabsError, ValueError):
    """A data column (or a regression residual) has zero variance."""


class UndefinedMetric(LinabsError, ValueError):
    """A metric cannot be computed, e.g. ROC-AUC with a single label class."""


class NoPositives(UndefinedMetric):
    pass


class NoNegatives(UndefinedMetric):
    pass


class PipelineStageError(LinabsError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class SingularRegressionWarning(UserWarning):
    """Collinear regressors; a ridge fallback was used."""
