"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage/missing input -> 2,
numerical failure -> 3, shape or vocabulary mismatch -> 4.
"""


class PwvqaError(Exception):
    """Base class for all package errors."""


class DimensionError(PwvqaError):
    """Operands have mismatched lengths or shapes."""


class DomainError(PwvqaError):
    """A numeric argument is outside the function's domain (NaN/Inf, negative probability, ...)."""


class ConfigError(PwvqaError):
    """A configuration value violates its documented constraint."""


class ContractError(PwvqaError):
    """A precondition of an operation was violated by the caller."""


class ParseError(PwvqaError):
    """An input file could not be parsed.

    Attributes:
        line: 1-based line number of the offending line, when known.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class FormatError(PwvqaError):
    """An input file parsed but violates the format contract (e.g. inconsistent vector lengths)."""


class VocabMismatchError(PwvqaError):
    """Checkpoint and dataset disagree on the answer vocabulary."""


class NumericalError(PwvqaError):
    """Training produced a non-finite loss.

    Attributes:
        batch_index: index of the offending batch within its epoch.
    """

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
