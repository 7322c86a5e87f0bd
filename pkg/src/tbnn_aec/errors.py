"""Exception hierarchy shared by every stage of the canceller."""


class AecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AecError, ValueError):
    """Invalid configuration value or incompatible settings."""


class ContractError(AecError, ValueError):
    """An input violates an operation's shape or type contract."""


class InsufficientDataError(AecError, ValueError):
    """Not enough signal to compute the requested quantity."""


class DataError(AecError):
    """Unreadable or inconsistent data on disk (WAV, manifests, corpora)."""


class NumericError(AecError, ArithmeticError):
    """A non-finite value was detected."""


class WeightsError(ConfigurationError):
    """Base class for weight-manifest problems."""


class MissingTensorError(WeightsError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("missing tensors: " + ", ".join(self.names))


class ShapeMismatchError(WeightsError):
    def __init__(self, mismatches):
        # mismatches: {name: (expected, actual)}
        self.mismatches = dict(sorted(mismatches.items()))
        parts = [f"{n} expected {tuple(e)} got {tuple(a)}" for n, (e, a) in self.mismatches.items()]
        super().__init__("shape mismatch: " + "; ".join(parts))


class UnusedTensorError(WeightsError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unused tensors: " + ", ".join(self.names))


class VersionMismatchError(WeightsError):
    pass


class StageError(AecError):
    """Wraps an error raised inside a pipeline stage, labelled with the stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
