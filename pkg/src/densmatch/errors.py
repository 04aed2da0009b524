"""Exception types raised across the package."""


class DensMatchError(Exception):
    """Base class for all package errors."""


class GeometryMismatch(DensMatchError, ValueError):
    """Two fields that must share a grid do not."""


class NonPositiveJacobian(DensMatchError, ValueError):
    """A Jacobian determinant that must be positive is not."""


class StepTooLarge(DensMatchError):
    """The incremental map ``y + eps * v`` folds somewhere on the grid."""


class DivergedError(DensMatchError):
    """Backtracking could not find any energy decrease on the first iteration."""


class ZeroMass(DensMatchError, ValueError):
    pass


class ZeroDistance(DensMatchError, ValueError):
    pass


class NonInvertibleParameters(DensMatchError, ValueError):
    """Radial bump parameters that would fold the map."""


class ParseError(DensMatchError, ValueError):
    pass


class SizeMismatch(DensMatchError, ValueError):
    pass


class UnsupportedElementType(DensMatchError, ValueError):
    pass
