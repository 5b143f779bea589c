"""Exception types shared by every module."""


class SparseSpectraError(Exception):
    """Base class."""


class InvalidParameter(SparseSpectraError, ValueError):
    pass


class ToleranceNotMet(SparseSpectraError, ArithmeticError):
    pass


class ResourceLimit(SparseSpectraError, MemoryError):
    pass


class PreconditionViolated(SparseSpectraError, ValueError):
    pass
