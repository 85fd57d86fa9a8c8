"""Exception types shared across the toolkit."""

from __future__ import annotations


class ArgumentError(ValueError):
    """An argument is out of contract (empty input, bad fraction, unknown mode...)."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with what an operation requires."""


class DataError(ValueError):
    """A dataset cannot satisfy a sampling or aggregation request.

    The message names the offending entity (reference point, table cell, ...).
    """


class FormatError(ValueError):
    """An on-disk payload is malformed.

    Carries ``offset``, the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced a non-finite or runaway loss.

    Carries ``step``, the inner/outer step index at which the loss blew up.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """A run configuration failed validation.

    ``fields`` lists every offending field, not just the first one found.
    """

    def __init__(self, fields: list[str]):
        super().__init__("invalid configuration: " + "; ".join(fields))
        self.fields = list(fields)
