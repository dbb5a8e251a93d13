"""Exception types shared across the package."""


class VqgridError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VqgridError):
    """Operands have incompatible shapes or dimensions."""


class ContractError(VqgridError):
    """A call violated an operation's precondition."""


class ConfigError(VqgridError):
    """A configuration value is invalid or inconsistent."""


class NumericError(VqgridError):
    """A computation produced or received non-finite / undefined values."""
