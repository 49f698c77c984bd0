"""Exception types raised across the package."""


class CotAsrError(Exception):
    """Base class for all package errors."""


class DimensionError(CotAsrError, ValueError):
    pass


class NumericalError(CotAsrError, ArithmeticError):
    pass


class InvariantError(CotAsrError, ValueError):
    """A probability table violates its normalization invariants."""


class InfeasibleTargetError(CotAsrError, ValueError):
    """CTC target cannot be emitted within the available frames."""


class BoundsError(CotAsrError, ValueError):
    pass


class StateError(CotAsrError, RuntimeError):
    """Backward called without a matching forward cache."""


class InputTooShortError(CotAsrError, ValueError):
    pass


class EmptyTargetError(CotAsrError, ValueError):
    pass


class TrainingDivergedError(CotAsrError, RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class CheckpointError(CotAsrError, IOError):
    pass


class VocabError(CotAsrError, ValueError):
    def __init__(self, offenders):
        self.offenders = sorted(set(offenders))
        super().__init__(f"characters outside vocabulary: {self.offenders!r}")


class ConfigError(CotAsrError, ValueError):
    pass


class InputError(CotAsrError, ValueError):
    pass


class UndefinedMetricError(CotAsrError, ValueError):
    pass
