"""Exception types raised across the package."""


class StereoAdaptError(Exception):
    """Base class for all errors raised by stereoadapt."""


class ShapeError(StereoAdaptError):
    """An operand has the wrong shape, dtype or extent for the operation."""


class GraphError(StereoAdaptError):
    """Invalid autodiff request (non-scalar root, unknown target tensor, ...)."""


class ConfigError(StereoAdaptError):
    """Invalid configuration value or malformed config file."""


class NumericsError(StereoAdaptError):
    """A computation produced non-finite values."""


class FileFormatError(StereoAdaptError):
    """A file on disk does not match the expected format."""


class SequenceError(StereoAdaptError):
    """A frame source misbehaved (resolution change, undecodable frame, ...)."""
