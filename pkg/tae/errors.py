"""
Error hierarchy for the engine.

Every error carries a short ``code`` so the CLI can print a single
machine-parseable line (``error: <code>: <message>``).
"""

from __future__ import annotations

from pathlib import Path


class TAEError(Exception):
    """Base class for all engine errors."""

    code: str = "tae_error"


# ── Tensor core ─────────────────────────────────────────────────────────────

class ShapeMismatchError(TAEError, ValueError):
    code = "shape_mismatch"


class BroadcastError(TAEError, ValueError):
    code = "broadcast_mismatch"


class DomainError(TAEError, ValueError):
    code = "domain_error"


class NonScalarLossError(TAEError, ValueError):
    code = "non_scalar_loss"


class TapeReuseError(TAEError, RuntimeError):
    code = "tape_reuse"


# ── Configuration / data ────────────────────────────────────────────────────

class ConfigError(TAEError, ValueError):
    code = "config_error"


class DatasetError(TAEError):
    code = "dataset_error"

    def __init__(self, message: str, sequence: str | None = None, line: int | None = None) -> None:
        self.sequence = sequence
        self.line = line
        where = ""
        if sequence is not None:
            where = f"[{sequence}" + (f":{line}" if line is not None else "") + "] "
        super().__init__(f"{where}{message}")


class ImageDecodeError(TAEError):
    code = "image_decode"

    def __init__(self, path: Path | str, reason: str) -> None:
        self.path = Path(path)
        super().__init__(f"{path}: {reason}")


# ── Checkpoints ─────────────────────────────────────────────────────────────

class CheckpointFormatError(TAEError):
    code = "checkpoint_format"


class CheckpointVersionError(CheckpointFormatError):
    code = "checkpoint_version"


class CheckpointTruncatedError(CheckpointFormatError):
    code = "checkpoint_truncated"


class CheckpointChecksumError(CheckpointFormatError):
    code = "checkpoint_checksum"


# ── Runs ────────────────────────────────────────────────────────────────────

class TrainingError(TAEError):
    code = "training_error"


class EvaluationError(TAEError):
    code = "evaluation_error"
