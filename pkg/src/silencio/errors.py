"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage/contract problems exit 1,
data/format problems exit 2, numeric failures exit 3.
"""


class SilencioError(Exception):
    """Base class for all package errors."""


class ContractError(SilencioError):
    """A call violated a documented precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, detail):
        super().__init__(f"{op}: {detail}")
        self.op = op


class DataError(SilencioError):
    """Corpus content is missing or inconsistent."""


class FormatError(SilencioError):
    """A file on disk does not match its expected format."""


class NumericError(SilencioError):
    """A computation produced non-finite values."""
