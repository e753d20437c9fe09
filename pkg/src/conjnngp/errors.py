"""Exception types shared across the package."""


class ModelError(Exception):
    """Base class for every error this package raises on purpose."""


class ValidationError(ModelError, ValueError):
    """Invalid user input: bad shapes, non-finite values, out-of-range parameters."""


class DuplicateCoordinateError(ValidationError):
    """Two or more rows of a coordinate array are exactly equal.

    Duplicate sites make neighbor conditioning sets singular, so they are
    rejected at ingestion rather than patched with jitter downstream.
    """

    def __init__(self, pairs):
        self.pairs = [(int(i), int(j)) for i, j in pairs]
        shown = ", ".join("(%d, %d)" % p for p in self.pairs[:8])
        tail = "" if len(self.pairs) <= 8 else " and %d more" % (len(self.pairs) - 8)
        super().__init__("duplicate coordinates at row pairs %s%s" % (shown, tail))


class DecompositionError(ModelError):
    """Cholesky factorization failed.

    ``pivot`` is the 1-based index of the leading minor that is not positive
    definite, when known. No jitter is added on failure; callers are expected
    to fix their inputs.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(ModelError):
    """An iterative solver stopped without meeting its tolerances.

    ``report`` carries the solver's convergence report when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
