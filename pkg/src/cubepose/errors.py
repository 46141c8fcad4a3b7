"""Exception types raised across the toolkit."""


class CubePoseError(Exception):
    """Base class for all toolkit errors."""


class NotARotation(CubePoseError):
    pass


class InvalidExtents(CubePoseError):
    pass


class NonPositiveScale(CubePoseError):
    pass


class TooFewPoints(CubePoseError):
    pass


class EmptyPointSet(CubePoseError):
    pass


class EmptyInput(CubePoseError):
    pass


class Diverged(CubePoseError):
    """The optimizer produced a non-finite loss."""


class BehindCamera(CubePoseError):
    pass


class ParseError(CubePoseError):
    """Base for input-format failures. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedHeader(ParseError):
    pass


class UnsupportedFormat(ParseError):
    pass


class TruncatedBody(ParseError):
    pass


class WrongFieldCount(ParseError):
    pass


class NonNumericField(ParseError):
    pass


class DontCareRecord(CubePoseError):
    pass


class SchemaViolation(ParseError):
    pass


class InvalidRotation(ParseError):
    pass


class MissingFile(CubePoseError):
    pass


class BadValue(CubePoseError):
    """A configuration value failed validation; ``key`` names the offender."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(message or f"bad value for {key!r}")
