"""Exception hierarchy. Everything derives from AfibShiftError so callers
(and the CLI) can tell our failures apart from programming errors."""


class AfibShiftError(Exception):
    pass


class ValidationError(AfibShiftError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    pass


class StratificationError(ValidationError):
    pass


class ArchitectureError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class FormatError(AfibShiftError):
    """Binary or text container is malformed."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingBytesError(FormatError):
    pass


class EncodingError(FormatError):
    pass


class NumericError(AfibShiftError, ArithmeticError):
    """Non-finite value during a forward pass or training."""


class RangeError(AfibShiftError, OverflowError):
    """Fixed-point value or accumulator outside its integer range."""
