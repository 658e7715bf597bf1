"""Exception types shared across the pipeline."""


class MetaShapError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MetaShapError, ValueError):
    """Input violates a documented contract (bad value, bad schema, bad count)."""


class LoadError(MetaShapError, OSError):
    """A file or bundle could not be read."""
