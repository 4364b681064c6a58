"""Exception types shared across the package."""


class MlocriskError(Exception):
    """Base class for package errors."""


class InvalidParamsError(MlocriskError, ValueError):
    """Risk parameters violate the validity rules (sigma/eta mismatch)."""


class NonConvergenceError(MlocriskError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class DivergedStateError(MlocriskError, RuntimeError):
    """An optimizer iterate became non-finite (step size too large)."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"iterate became non-finite at step {step}")


class InvalidWitnessError(MlocriskError, ValueError):
    """Witness-pair parameters fail the separation or risk inequality."""


class UnsupportedSigmaError(MlocriskError, ValueError):
    """Operation is not defined for the requested sigma mode."""


class ParseError(MlocriskError, ValueError):
    """Input file could not be parsed; carries row/column location."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column!r})" if column is not None else ")")
        super().__init__(message + loc)


class EmptyDatasetError(MlocriskError, ValueError):
    """No usable rows remain after parsing/filtering."""


class ConfigError(MlocriskError, ValueError):
    """CLI configuration failed validation; names the offending field."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"config field {field!r}: {message}"
        super().__init__(message)
