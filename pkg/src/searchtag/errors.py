"""Exception types shared across the package."""


class SearchTagError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SearchTagError, ValueError):
    """Dimensions or settings do not fit together."""


class ContractViolation(SearchTagError, ValueError):
    """A caller broke an operation's precondition."""


class InputError(SearchTagError, ValueError):
    """Bad user data: sentences, tag sequences, actions."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NumericError(SearchTagError, ArithmeticError):
    """A NaN or infinity showed up in the forward or backward pass."""
