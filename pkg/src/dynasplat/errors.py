"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """An input violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced or detected non-finite / degenerate values."""


class DatasetError(RuntimeError):
    """A scene directory is missing files or internally inconsistent."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed, truncated, or version-incompatible."""
