"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the operation's domain (bad value or shape)."""


class ShapeError(DomainError):
    """Tensor shapes are incompatible for the requested operation."""


class StateError(RuntimeError):
    """An operation was invoked before its required state was prepared."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, scene document, wire body) is malformed."""
