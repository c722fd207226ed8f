"""Exception types shared across the package."""


class EmcommError(Exception):
    """Base class for all package errors."""


class DimensionError(EmcommError, ValueError):
    pass


class ContractError(EmcommError):
    """A precondition of an operation was violated."""


class ConfigError(EmcommError, ValueError):
    pass


class CapacityError(EmcommError, ValueError):
    pass


class NumericError(EmcommError, ArithmeticError):
    pass
