"""Exception types raised across the package."""


class ReactGenError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(ReactGenError, ValueError):
    pass


class InvalidRotation(ReactGenError, ValueError):
    pass


class ShapeMismatch(ReactGenError, ValueError):
    pass


class ConfigError(ReactGenError, ValueError):
    pass


class FormatError(ReactGenError, ValueError):
    pass


class EmptySequence(ReactGenError, ValueError):
    pass


class UnknownSequence(ReactGenError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidRole(ReactGenError, ValueError):
    pass


class ScheduleError(ReactGenError, ValueError):
    pass


class LabelOutOfRange(ReactGenError, ValueError):
    pass


class CheckpointError(ReactGenError, ValueError):
    """Checkpoint contents disagree with the configuration or weights."""


class SessionNotInitialized(ReactGenError, RuntimeError):
    pass


class NumericalError(ReactGenError, ArithmeticError):
    pass


class DegenerateDataset(ReactGenError, ValueError):
    pass


class LabelMismatch(ReactGenError, ValueError):
    pass


class InsufficientSamples(ReactGenError, ValueError):
    pass
