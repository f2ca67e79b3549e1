"""Exception types shared across the package."""


class MechanismError(Exception):
    """Base class for errors raised by the mechanisms in this package."""


class SimplexError(MechanismError, ValueError):
    """A probability vector is not on its simplex (or has the wrong length)."""


class NotConvexError(MechanismError, ValueError):
    """A welfare function failed the grid subgradient test.

    ``witness`` holds the offending ``(p, q, violation)`` triple when known.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class GuardExceeded(MechanismError, RuntimeError):
    """An enumeration (paths, outcomes, deviations) exceeded its size guard."""


class InvalidInstance(MechanismError, ValueError):
    """An instance or application spec is malformed.

    ``field`` is a dotted path to the offending entry, when known.
    """

    def __init__(self, message, field=None):
        self.message = message
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
