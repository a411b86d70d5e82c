"""Exception types shared across the package.

Everything raised on purpose derives from TfssdError so callers can catch
library failures without also swallowing programming mistakes.
"""


class TfssdError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TfssdError, ValueError):
    """An argument value violates a documented precondition."""


class ShapeMismatchError(InvalidArgumentError):
    """Array arguments have inconsistent shapes."""


class ResourceLimitError(TfssdError):
    """An operation would exceed an explicit size or memory guard."""


class FormatError(TfssdError):
    """A binary or text artifact is malformed.

    ``offset`` is the byte position where decoding failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SemanticMismatchError(TfssdError):
    """Artifacts are individually valid but inconsistent with each other."""


class ConfigError(TfssdError):
    """A run configuration is missing required keys or holds bad values."""


class NumericError(TfssdError):
    """A non-finite value appeared during computation.

    ``tensor_name`` identifies the first offending tensor, when known.
    """

    def __init__(self, message: str, tensor_name: str | None = None):
        if tensor_name is not None:
            message = f"{message} (tensor: {tensor_name})"
        super().__init__(message)
        self.tensor_name = tensor_name
