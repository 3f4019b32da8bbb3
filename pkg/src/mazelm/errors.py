"""Exception types shared across the package.

Every failure mode that callers are expected to handle has a named class
here; the CLI maps them onto its documented exit codes.
"""

from __future__ import annotations


class MazelmError(Exception):
    """Base class for all package-specific errors."""


class GenerationExhausted(MazelmError):
    """Rejection sampling hit its attempt cap without an acceptable maze."""

    def __init__(self, message: str, attempts: int) -> None:
        super().__init__(message)
        self.attempts = attempts


class NoPath(MazelmError):
    """Goal unreachable from start under the given connectivity."""


class UnknownToken(MazelmError):
    """A token or token id has no entry in the vocabulary in use."""


class FormatError(MazelmError):
    """A corpus file line is malformed or has an unsupported version."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientRecords(MazelmError):
    """A split request asked for more records than are available."""


class SequenceTooLong(MazelmError):
    """An input sequence exceeds the model's configured max_seq."""


class VersionMismatch(MazelmError):
    """Checkpoint version or architecture does not match expectations."""


class CorruptCheckpoint(MazelmError):
    """Checkpoint bytes are truncated or structurally invalid."""


class NonFiniteLoss(MazelmError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(message)
        self.step = step


class UnknownInstance(MazelmError):
    """Requested maze id is not present in the corpus."""
