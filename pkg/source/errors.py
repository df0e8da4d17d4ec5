"""
Exceptions raised by the Local-Global INR modules.

Every public precondition violation raises one of these. They all derive from LgInrError, and
most also derive from the builtin they refine, so callers catching ValueError keep working.
"""


class LgInrError(Exception):
    """
    Base class for all errors of this library.
    """


class ShapeError(LgInrError, ValueError):
    """
    Raised if tensor dimensions or batch sizes do not fit together.
    """


class PartitionError(LgInrError, ValueError):
    """
    Raised for invalid bounds, factors or coordinates and for infeasible partition plans.
    """


class CropError(LgInrError, ValueError):
    """
    Raised for illegal crop or extension requests and for access to cropped partitions.
    """


class FormatError(LgInrError, ValueError):
    """
    Raised if a signal or model file is malformed.
    """
    def __init__(self, message, offset=None):
        if offset is not None:
            message = "{} (at byte offset {})".format(message, offset)
        super().__init__(message)
        self.offset = offset


class DivergenceError(LgInrError, ArithmeticError):
    """
    Raised if loss or gradients become non-finite during training.
    """
    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = "{} (iteration {})".format(message, iteration)
        super().__init__(message)
        self.iteration = iteration
