"""Exception types shared across the kit.

Validation failures are ValueError subclasses so callers that do not care
about the fine-grained kind can catch the usual builtin. Numeric failures
(overflow, non-finite results) derive from ArithmeticError instead, which
keeps the CLI exit-code mapping a two-branch affair.
"""

__all__ = [
    "SpikekitError",
    "DimensionError",
    "EmptyInputError",
    "WindowError",
    "DomainError",
    "SchemeError",
    "FormatError",
    "NumericError",
]


class SpikekitError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SpikekitError, ValueError):
    """Tensor rank or shape does not match the operation's contract."""


class EmptyInputError(SpikekitError, ValueError):
    """An operation received a zero-length sequence or empty tensor."""


class WindowError(SpikekitError, ValueError):
    """Sliding-window size is zero or otherwise unusable."""


class DomainError(SpikekitError, ValueError):
    """A value lies outside its required numeric domain (gates, thresholds, k)."""


class SchemeError(SpikekitError, ValueError):
    """A spike coding scheme cannot represent the given counts."""


class FormatError(SpikekitError, ValueError):
    """A serialized file is malformed: bad magic, truncated payload, bad manifest."""


class NumericError(SpikekitError, ArithmeticError):
    """Integer overflow or a non-finite intermediate where finiteness is required."""
