"""Exception types shared across the package."""


class TreeStructureError(ValueError):
    """A tree failed structural validation (bad links, orphans, bad shapes)."""


class DataFormatError(ValueError):
    """An input file could not be parsed; the message carries the position."""


class NumericError(ArithmeticError):
    """Training produced non-finite numbers."""
