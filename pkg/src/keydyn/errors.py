"""Exception taxonomy shared across the toolkit.

CLI exit codes: usage/configuration problems exit 1, data problems exit 2,
numeric failures exit 3.
"""


class KeydynError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(KeydynError):
    """Invalid configuration: bad flag combination, unknown mode, missing column."""


class DataError(KeydynError):
    """Unusable input data: unreadable file, malformed rows, empty dataset."""


class CheckpointError(DataError):
    """Checkpoint directory is corrupt or inconsistent with its manifest."""


class ProtocolError(KeydynError):
    """Evaluation/scoring protocol violated, e.g. enrollment set below a scorer's minimum."""


class NumericFailure(KeydynError):
    """Non-finite value where a finite one is required (diverged training, NaN loss)."""
