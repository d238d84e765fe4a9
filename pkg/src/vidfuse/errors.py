"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3. Everything derives from VidfuseError so callers can
catch the whole family at once.
"""


class VidfuseError(Exception):
    """Base class for all vidfuse errors."""


class ShapeError(VidfuseError):
    """Operands have incompatible dimensions."""


class ConfigError(VidfuseError):
    """Invalid or inconsistent configuration / usage."""


class DataError(VidfuseError):
    """Malformed dataset, score file, or checkpoint content."""


class NumericalError(VidfuseError):
    """Training or evaluation produced non-finite values."""
