"""Exception hierarchy shared by all codec modules."""


class CodecError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(CodecError):
    """Model or layer wiring is inconsistent (shape/channel mismatches)."""


class CodingError(CodecError):
    """Entropy-coding failure: bad symbol, exhausted or corrupt stream."""


class ParseError(CodecError):
    """A file does not conform to its declared binary or text format."""


class InternalError(CodecError):
    """An internal invariant was violated; indicates a bug, not bad input."""
