"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, ranges, or missing fields."""


class ValidationError(ValueError):
    """A probability kernel produced a non-stochastic row."""


class DivergenceError(RuntimeError):
    """A solver produced non-finite or exploding quantities."""


class UnsupportedModelError(ValueError):
    """The requested operation does not support this model class."""
