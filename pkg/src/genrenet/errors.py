"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/format
problems exit 2, numerical failures exit 3.
"""


class GenreNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GenreNetError):
    """Operand dimensions are incompatible."""


class ArgumentError(GenreNetError):
    """An argument value is outside its legal range."""


class ConfigError(GenreNetError):
    """A configuration object is internally inconsistent or mismatched."""


class DataError(GenreNetError):
    """A dataset violates an invariant (empty, bad labels, dimension clash)."""


class FormatError(DataError):
    """An on-disk file does not match its declared binary/text format."""


class LabelError(DataError):
    """A label value is outside the declared class range."""


class NumericalError(GenreNetError):
    """A computation produced NaN/Inf or failed a numerical check."""
