"""Exception types shared across the package."""


class SRCISError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SRCISError, ValueError):
    pass


class NumericError(SRCISError, ArithmeticError):
    pass


class InvariantError(SRCISError):
    """A structural invariant of the memory store or a model would be broken."""


class ValidationError(SRCISError, ValueError):
    pass


class NotReadyError(SRCISError):
    """Online experience was queried before any batch was absorbed."""


class OracleError(SRCISError):
    """An external or mock oracle failed to produce a usable answer."""


class ParseError(SRCISError, ValueError):
    def __init__(self, message, *, line=None, field=None):
        ctx = []
        if line is not None:
            ctx.append(f"line {line}")
        if field is not None:
            ctx.append(f"field {field!r}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.line = line
        self.field = field
