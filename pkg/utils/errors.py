"""Typed errors shared by every component.

All errors derive from ``TransducerError`` (a ``ValueError``) so callers that
only care about "bad input" can catch one type. The CLI maps
``NumericalAbortError`` and ``NonFiniteError`` to the numerical exit code and
everything else to the validation exit code.
"""

from typing import Optional


class TransducerError(ValueError):
    """Base class for all toolkit errors"""


class EmptyReductionError(TransducerError):
    def __init__(self, message: str = "empty reduction"):
        super().__init__(message)


class NonFiniteError(TransducerError):
    """A value that must be finite was NaN or infinite."""

    def __init__(self, message: str, coordinate: Optional[int] = None):
        if coordinate is not None:
            message = f"{message} (coordinate {coordinate})"
        super().__init__(message)
        self.coordinate = coordinate


class NoAlignmentError(TransducerError):
    """No monotone alignment of the labels fits in the available frames."""

    def __init__(self, required: int, available: int, utterance_id: Optional[str] = None):
        where = f" for utterance {utterance_id}" if utterance_id else ""
        super().__init__(
            f"no alignment{where}: labels need at least {required} frames, got {available}"
        )
        self.required = required
        self.available = available
        self.utterance_id = utterance_id


class ShapeMismatchError(TransducerError):
    pass


class InvalidLabelError(TransducerError):
    pass


class GuardExceededError(TransducerError):
    pass


class FormatVersionError(TransducerError):
    pass


class SpecHashMismatchError(TransducerError):
    pass


class MissingModelError(TransducerError):
    pass


class NumericalAbortError(TransducerError):
    """Training produced a non-finite loss."""

    def __init__(self, utterance_id: str, value: float):
        super().__init__(f"non-finite loss {value} on utterance {utterance_id}")
        self.utterance_id = utterance_id
        self.value = value
