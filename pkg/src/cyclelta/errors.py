"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not fit the operation."""


class InputError(ValueError):
    """A value is outside the domain an operation accepts (label range, symbol, ...)."""


class ContractError(ValueError):
    """Arguments violate an alignment/length contract between two pieces of data."""


class ConfigError(ValueError):
    """Run or grammar configuration is invalid."""


class DataError(IOError):
    """Dataset or checkpoint file is missing, unreadable or corrupt."""


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""
