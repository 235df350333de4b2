"""Exception taxonomy shared across the package."""


class LorentzkitError(Exception):
    """Base class for all package errors."""


class UsageError(LorentzkitError):
    """Caller violated a precondition (shape/manifold mismatch, bad argument)."""


class NumericError(LorentzkitError):
    """A computation left its numeric domain (non-finite value, degenerate input)."""


class CheckpointFormatError(LorentzkitError):
    """Checkpoint bytes do not follow the LZKT container format."""


class ConfigError(LorentzkitError):
    """Experiment config file is malformed or contains unknown keys."""
