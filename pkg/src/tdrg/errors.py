"""Exception types shared across the package."""


class TDRGError(Exception):
    """Base class for all package errors."""


class DimensionError(TDRGError, ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ContractError(TDRGError, ValueError):
    """Raised when a caller violates an operation's preconditions."""


class ConfigError(TDRGError, ValueError):
    """Raised for unknown keys, bad values or incompatible configurations."""


class NumericError(TDRGError, ArithmeticError):
    """Raised when a non-finite value shows up during training or a gradient check fails."""


class GenerationError(TDRGError, RuntimeError):
    """Raised when the synthetic generator cannot satisfy its constraints."""
