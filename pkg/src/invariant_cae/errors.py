"""Exception hierarchy shared by all modules."""


class CaeError(Exception):
    pass


class ValidationError(CaeError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class FormatError(CaeError, ValueError):
    """A file could not be parsed; the message carries the line or byte offset."""


class NumericError(CaeError, ArithmeticError):
    pass
