"""Exception hierarchy.

Three families map onto the CLI exit codes: :class:`InputError` (2),
:class:`EstimationError` (3) and :class:`StoreError` (4).
"""


class BagmError(Exception):
    """Base class for every error raised by this package."""


# -- input / usage -----------------------------------------------------------


class InputError(BagmError, ValueError):
    """Bad user input: CSV content, schema grammar, invalid configuration."""


class SchemaError(InputError):
    pass


class HeaderMismatch(InputError):
    pass


class UnknownLevel(InputError):
    pass


class NonNumericValue(InputError):
    pass


class RaggedRow(InputError):
    pass


class EmptyInput(InputError):
    pass


class ZeroVariance(InputError):
    pass


# -- storage -----------------------------------------------------------------


class StoreError(BagmError):
    """Problems with an on-disk row store."""


class CorruptHeader(StoreError):
    pass


class TruncatedFile(StoreError):
    pass


class SchemaMismatch(StoreError):
    pass


class IndexOutOfRange(StoreError, IndexError):
    pass


# -- numerics / estimation ---------------------------------------------------


class EstimationError(BagmError, ArithmeticError):
    """Numerical failure while fitting or summarising estimates."""


class SingularMatrix(EstimationError):
    pass


class SingularHessian(SingularMatrix):
    pass


class NonFiniteValue(EstimationError):
    pass


class NonFiniteLoss(NonFiniteValue):
    pass


class MaxIterExceeded(EstimationError):
    pass


class SubsampleFitFailed(EstimationError):
    def __init__(self, k, attempts, cause):
        self.k = k
        self.attempts = attempts
        self.cause = cause
        super().__init__(f"subsample {k} failed on all {attempts} attempts; last error: {cause!r}")


class Degenerate(EstimationError):
    pass


class ZeroSE(EstimationError):
    pass
