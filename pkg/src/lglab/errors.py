"""Exception types shared across the package."""


class LglabError(Exception):
    """Base class for all package errors."""


class CapExceeded(LglabError):
    """A structure family is too large to enumerate explicitly."""


class NoConvergence(LglabError):
    """The active-set projection hit its iteration cap (indicates a solver bug)."""


class DivergedGradient(LglabError):
    """A pullback gradient callback returned non-finite values."""


class ShapeMismatch(LglabError):
    """Model and input dimensions disagree."""


class ConfigError(LglabError):
    """A run configuration document is malformed."""
