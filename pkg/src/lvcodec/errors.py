"""Exception hierarchy shared across the package."""


class LvcodecError(Exception):
    """Base class for all package errors."""


class DimensionError(LvcodecError, ValueError):
    """Tensor or image dimensions violate an operation's contract."""


class ConfigurationError(LvcodecError, ValueError):
    """Invalid configuration value, missing plugin, or out-of-range index."""


class NumericError(LvcodecError, ArithmeticError):
    """Non-finite values or numerically invalid inputs."""


class FormatError(LvcodecError, ValueError):
    """Malformed container, wrong magic bytes, or unsupported version."""


class EncodeError(LvcodecError, ValueError):
    """Entropy encoder was asked to code a symbol outside its table support."""


class DecodeError(LvcodecError, ValueError):
    """Bitstream exhausted, truncated, or otherwise undecodable."""
