"""Exception hierarchy shared by every diaa module."""


class DiaaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DiaaError, ValueError):
    """Input or tensor shape does not match what the network expects."""


class ClassIndexError(DiaaError, IndexError):
    """A class index is outside ``[0, m)``."""


class DomainError(DiaaError, ValueError):
    """A value lies outside its permitted domain (empty input, non-finite, out of range)."""


class ValidationError(DiaaError, ValueError):
    """Layer parameters are inconsistent with declared shapes."""


class ModelFormatError(DiaaError, ValueError):
    """A model file could not be parsed."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class StructureError(DiaaError, ValueError):
    """The layer stack violates a structural precondition (e.g. orphan batchnorm)."""


class DataFormatError(DiaaError, ValueError):
    """A dataset file is malformed (bad IDX magic, missing label column, ...)."""


class LabelError(DiaaError, ValueError):
    """A dataset label is not a valid class index."""


class ConfigError(DiaaError, ValueError):
    """Invalid attack, training, or harness configuration."""
