"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """A configuration value is out of its legal range."""


class DomainError(ValueError):
    """An input violates an operation's precondition (shape, emptiness, range)."""


class CapacityError(RuntimeError):
    """An instance is too large for an exhaustive algorithm."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""


class CheckpointError(RuntimeError):
    """A model checkpoint is malformed or incompatible."""
