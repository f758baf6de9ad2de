"""Exception types raised across the package."""


class DatasetError(ValueError):
    """Malformed or inconsistent input data.

    ``line`` is the 1-based line number in the source file when the error
    comes from parsing, otherwise ``None``.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(ValueError):
    """Base class for model container problems."""


class ModelVersionError(ModelFormatError):
    pass


class ModelCorruptError(ModelFormatError):
    pass


class ModelHashMismatchError(ModelFormatError):
    """A family model was loaded against a network it was not built from."""
