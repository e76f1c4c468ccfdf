"""Exception taxonomy shared across the package."""


class BayescallError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BayescallError, ValueError):
    """Operand shapes do not conform to the operation's rules."""


class DomainError(BayescallError, ValueError):
    """A value is outside the mathematical domain of the operation."""


class ContractError(BayescallError, ValueError):
    """An API precondition was violated by the caller."""


class StateError(BayescallError, RuntimeError):
    """An operation was invoked in an invalid object state."""


class FormatError(BayescallError, ValueError):
    """A serialized file is malformed.

    `offset` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BalanceError(BayescallError, ValueError):
    """A dataset does not contain both classes."""


class TrainingError(BayescallError, RuntimeError):
    """Training cannot continue (for example a non-finite gradient)."""


class ConfigError(BayescallError, ValueError):
    """A configuration file or override is invalid."""
