"""Exception types shared across the package."""


class PercolabError(Exception):
    """Base class for every error raised by percolab."""


class ParameterError(PercolabError, ValueError):
    """Invalid model, geometry or bound parameters."""


class SubcriticalError(ParameterError):
    """The offspring law has mean <= 1, so the process dies out almost surely."""


class ResourceCapError(PercolabError):
    """A configured node, degree, rejection or iteration cap was exceeded."""


class FormatError(PercolabError):
    """A serialized stream is truncated, corrupted or of an unknown version."""
