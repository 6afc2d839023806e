"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or matrix dimensions do not line up."""


class DataError(ValueError):
    """Input data violates a schema or an integrity constraint."""


class ConfigError(ValueError):
    """A run configuration or manifest is invalid."""


class GraphFormatError(DataError):
    """A graph file could not be parsed."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise failed."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
