"""Exception types shared across the package.

Each maps to a distinct CLI exit code; see cli.py.
"""


class ConfigError(Exception):
    """Invalid configuration value or malformed config file."""


class CheckpointError(Exception):
    """Checkpoint I/O failure: bad magic, version or fingerprint mismatch, truncation."""


class NumericDegeneracyError(Exception):
    """A computation hit a numerically unsafe regime (e.g. alpha_bar ~ 0 in Tweedie)."""


class TrainingDivergenceError(Exception):
    """Training loss became non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
