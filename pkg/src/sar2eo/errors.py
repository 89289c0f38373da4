"""Exception hierarchy shared by every module.

The CLI maps any ``Sar2EoError`` to exit code 1 and a single ``error:`` line.
"""


class Sar2EoError(Exception):
    """Base class for domain errors."""


class DimensionError(Sar2EoError, ValueError):
    """Tensor or image extents do not satisfy an operation's shape contract."""


class ConfigError(Sar2EoError, ValueError):
    """A configuration value is out of range or malformed."""


class ContractError(Sar2EoError, ValueError):
    """A caller violated a precondition that is not about shapes."""


class DataError(Sar2EoError):
    """Input data is missing or unusable."""


class PairingError(DataError):
    """SAR and EO files could not be paired by filename."""

    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = tuple(ids)


class NumericError(Sar2EoError, ArithmeticError):
    """A numerical precondition (symmetry, definiteness) failed."""
