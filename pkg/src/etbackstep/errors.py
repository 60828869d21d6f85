"""Exception types shared across the toolkit."""


class SpecificationError(ValueError):
    """Malformed plant, configuration or controller parameters."""


class NumericError(ArithmeticError):
    """A model function produced a non-finite value.

    ``location`` carries whatever indices identify the failing term,
    typically ``(i, k, t)`` with 1-based subsystem/channel indices.
    """

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{message} at {location}"
        super().__init__(message)
        self.location = location


class ContractError(RuntimeError):
    """An operation was called outside its calling contract."""
