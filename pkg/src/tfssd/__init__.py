"""Bi-domain state-space sequence classification toolkit.

A small numpy stack for sequence classification experiments: a reverse-mode
tape over real and complex arrays, linear state-space scans with three
interchangeable evaluation strategies, a two-branch block that mixes a
temporal convolution path with a spectrally gated path, and a trainer with
stratified cross-validation over binary feature files.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    ResourceLimitError,
    SemanticMismatchError,
    ShapeMismatchError,
    TfssdError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "FormatError",
    "InvalidArgumentError",
    "NumericError",
    "ResourceLimitError",
    "SemanticMismatchError",
    "ShapeMismatchError",
    "TfssdError",
]
