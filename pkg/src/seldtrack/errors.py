"""Exception types shared across the package.

``ValidationError`` covers bad inputs/configuration (CLI exit code 1);
everything else that escapes is treated as a runtime error (exit code 2).
"""


class ValidationError(ValueError):
    """Invalid input, configuration, or file content."""


class CheckpointError(ValidationError):
    """Unreadable, corrupted, or version-incompatible checkpoint."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss)."""
