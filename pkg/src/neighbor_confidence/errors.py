"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class NeighborConfidenceError(Exception):
    """Base class for all package errors."""


class ParameterError(NeighborConfidenceError, ValueError):
    """An argument is outside its documented domain."""


class DataError(NeighborConfidenceError, ValueError):
    """Input data is malformed (non-finite values, duplicate ids, ...)."""


class ShapeError(NeighborConfidenceError, ValueError):
    """Array dimensions do not match the model or index."""


class FormatError(NeighborConfidenceError):
    """A binary or text file does not follow its documented layout."""


class UnsupportedVersionError(FormatError):
    """A file declares a format version this package cannot read."""


class UndefinedCorrelationError(DataError):
    """Rank correlation requested on constant input."""


class TrainingDivergedError(NeighborConfidenceError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss
