"""Error taxonomy shared by every module.

All three are ValueError subclasses so callers that do not care about the
distinction can catch the base class.
"""


class ShapeError(ValueError):
    """An operand's rank or extents do not match the operation's contract."""


class DomainError(ValueError):
    """A value is outside the operation's mathematical domain (e.g. delta <= 0)."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or names an unknown option."""
