"""Exception hierarchy shared across the toolkit.

Every error the library raises deliberately derives from SeqforgeError so the
CLI can catch one type and turn it into a clean exit.
"""


class SeqforgeError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SeqforgeError):
    """Tensor shapes incompatible with the requested operation."""


class GatherIndexError(SeqforgeError):
    """A gather index falls outside the table's row count."""


class MaskedRowError(SeqforgeError):
    """A softmax row is fully masked (no position may receive weight)."""


class NonScalarLossError(SeqforgeError):
    """backward() was called on a tensor that is not a scalar."""


class EmptyCorpusError(SeqforgeError):
    """Vocabulary construction was given an empty corpus."""


class FeatureCountError(SeqforgeError):
    """A token does not carry the configured number of annotation fields."""


class EmptySourceError(SeqforgeError):
    """A source sentence is empty and cannot be translated."""


class EmptyDatasetError(SeqforgeError):
    """An operation that needs data was given an empty dataset."""


class ConfigError(SeqforgeError):
    """A configuration value is missing, unknown, or out of range.

    `key` names the offending option.
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class NonFiniteGradientError(SeqforgeError):
    """A parameter gradient contains NaN or infinity; the step was aborted."""

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter '{name}'")
        self.name = name


class NonFiniteLossError(SeqforgeError):
    """The training loss became NaN or infinite."""


class CheckpointError(SeqforgeError):
    """Base class for checkpoint/dataset file errors."""


class BadMagicError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class UnknownVersionError(CheckpointError):
    """The file's format version is not recognized."""


class ManifestMismatchError(CheckpointError):
    """Stored parameter shapes disagree with the model configuration."""


class TruncatedFileError(CheckpointError):
    """The file ends before all declared content was read."""
