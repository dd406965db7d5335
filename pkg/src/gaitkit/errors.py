"""Exception types shared across the toolkit."""


class GaitkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GaitkitError, ValueError):
    """Operand shapes (or channel counts) are incompatible."""


class ContractError(GaitkitError, ValueError):
    """An operation was called outside its contract (bad argument, bad mode)."""


class DataError(GaitkitError, ValueError):
    """Input data is malformed or unusable (degenerate pose, corrupt file, ...)."""


class ConfigError(GaitkitError, ValueError):
    """A configuration document is invalid (unknown key, bad value)."""
