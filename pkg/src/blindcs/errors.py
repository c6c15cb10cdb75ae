"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with each other or with a grid."""


class RegistrationError(DimensionError):
    """Two data sources are not spatially registered on the same grid."""


class NumericalError(ArithmeticError):
    """An inference update produced a non-finite or invalid value."""
