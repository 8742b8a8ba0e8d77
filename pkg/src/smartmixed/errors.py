"""Exception hierarchy shared by every module."""


class SmartMixedError(Exception):
    """Base class for all package errors."""


class DimensionError(SmartMixedError, ValueError):
    pass


class EmptyInputError(SmartMixedError, ValueError):
    pass


class NonFiniteError(SmartMixedError, ValueError):
    pass


class InvalidTemperature(SmartMixedError, ValueError):
    pass


class ConfigError(SmartMixedError, ValueError):
    pass


class LabelError(SmartMixedError, ValueError):
    pass


class CacheError(SmartMixedError, RuntimeError):
    """A backward pass was given a cache that does not match the network state."""


class FormatError(SmartMixedError, ValueError):
    """Malformed IDX or checkpoint file."""


class TruncationError(FormatError):
    pass


class StratifyError(SmartMixedError, ValueError):
    pass


class RankError(SmartMixedError, ValueError):
    pass


class InsufficientDepthError(SmartMixedError, ValueError):
    """The network has no hidden-to-hidden weight matrix."""


class CheckpointError(SmartMixedError, IOError):
    pass


class DataMissingError(SmartMixedError, FileNotFoundError):
    pass
