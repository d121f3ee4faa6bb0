"""Exception types shared across the package."""


class Tile360Error(Exception):
    """Base class for all package-specific errors."""


class ShapeError(Tile360Error, ValueError):
    """Array dimensions are inconsistent with an operation's contract."""


class ParameterError(Tile360Error, ValueError):
    """A scalar argument is outside its documented domain."""


class ConfigurationError(Tile360Error, ValueError):
    """A config object, file, or world description is unusable."""


class PredictionError(Tile360Error, RuntimeError):
    """A predictor cannot produce output, e.g. cross-user data too short."""


class ProtocolError(Tile360Error, RuntimeError):
    """Caller violated the environment's request sequencing."""


class TrainingError(Tile360Error, RuntimeError):
    """Training produced non-finite numbers or an inconsistent rollout."""


class InfeasibleError(Tile360Error, ValueError):
    """A solver's problem instance is infeasible or over its size guard."""
