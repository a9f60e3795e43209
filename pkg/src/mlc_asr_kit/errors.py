"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class KitError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class InputError(KitError, ValueError):
    """Invalid arguments or input data that fail validation."""

    exit_code = 1


class ConfigError(InputError):
    """A configuration or registry file is incomplete or inconsistent."""


class FormatError(KitError):
    """A file does not match its declared format or is corrupted.

    Attributes:
        offset: byte (or line) position where the problem was detected, if known.
    """

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TextEncodingError(FormatError):
    """Text is not valid UTF-8 / contains unencodable code points."""


class ScorerContractError(KitError):
    """A token scorer returned a result that violates its interface."""

    exit_code = 3
