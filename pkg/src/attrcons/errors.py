"""Exception hierarchy shared by every attrcons module."""


class AttrConsError(Exception):
    """Base class for all data and validation errors raised by attrcons."""


class ParseError(AttrConsError, ValueError):
    """A malformed input file.

    ``line`` is 1-based and counts the header line; ``field`` names the
    offending column or JSON key when known.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EmptyGroupError(AttrConsError, ValueError):
    pass


class QualityError(AttrConsError, ValueError):
    """Image could not be decoded or is too small to score."""


class MissingQualityError(AttrConsError, LookupError):
    pass


class ConfigError(AttrConsError, ValueError):
    pass
