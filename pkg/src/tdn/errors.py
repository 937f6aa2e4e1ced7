"""Exception hierarchy shared by all modules."""


class TDNError(Exception):
    pass


class DimensionError(TDNError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TDNError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(TDNError, ValueError):
    """A file on disk is malformed, truncated or of the wrong version."""


class DataError(TDNError, ValueError):
    """Dataset contents or generator settings are invalid."""


class InvariantError(TDNError, RuntimeError):
    """An internal invariant failed; indicates a bug rather than bad input."""
