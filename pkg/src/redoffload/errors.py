"""Exception hierarchy shared by all modules."""


class OffloadError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(OffloadError):
    """A trace or config file does not follow the declared schema."""


class IntegrityError(OffloadError):
    """Structural inconsistency, e.g. missing or non-contiguous task rows."""


class TraceValueError(OffloadError, ValueError):
    """A field holds a value outside its allowed range."""


class ConfigError(OffloadError, ValueError):
    pass


class EmptyInputError(OffloadError, ValueError):
    pass


class InsufficientHistoryError(OffloadError):
    pass


class DegenerateLabelsError(OffloadError, ValueError):
    """Only one class is present where both are required."""


class DimensionError(OffloadError, ValueError):
    pass


class ContractViolationError(OffloadError):
    """A caller broke an API contract (stale cache, empty server set, ...)."""


class TrainingDivergenceError(OffloadError, FloatingPointError):
    pass


class BufferNotReadyError(OffloadError):
    """Replay buffer holds fewer experiences than the requested batch."""
