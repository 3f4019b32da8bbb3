"""Maze-navigation language models, trained from scratch.

The package compares two training objectives on serialized grid mazes:
standard next-token prediction (decoder-only) and masked prediction with a
uniformly sampled masking rate (encoder-decoder), including corpus
generation, training, generative evaluation, and rendering.
"""

from .errors import (
    CorruptCheckpoint,
    FormatError,
    GenerationExhausted,
    InsufficientRecords,
    MazelmError,
    NoPath,
    NonFiniteLoss,
    SequenceTooLong,
    UnknownInstance,
    UnknownToken,
    VersionMismatch,
)

__version__ = "0.1.0"

__all__ = [
    "CorruptCheckpoint",
    "FormatError",
    "GenerationExhausted",
    "InsufficientRecords",
    "MazelmError",
    "NoPath",
    "NonFiniteLoss",
    "SequenceTooLong",
    "UnknownInstance",
    "UnknownToken",
    "VersionMismatch",
    "__version__",
]
