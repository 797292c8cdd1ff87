"""Exception hierarchy shared by every module."""


class P2PRiskError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(P2PRiskError, ValueError):
    """Input violates a documented precondition."""


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelingError(P2PRiskError):
    """A compliance rule could not be evaluated for a row."""

    def __init__(self, field, row=None):
        self.field = field
        self.row = row
        where = "" if row is None else f" (row {row})"
        super().__init__(f"required field {field!r} is missing{where}")


class InfeasibleSplitError(ValidationError):
    """A fold would receive no positive cases."""


class OutOfScopeError(P2PRiskError, NotImplementedError):
    pass


class LeakageAcknowledgementError(P2PRiskError):
    pass
