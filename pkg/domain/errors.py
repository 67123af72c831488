class RGError(Exception):
    """
    Base class for every failure the engine raises on purpose.
    exit_code follows the run script contract.
    """
    exit_code = 3


class NotInvertibleError(RGError):
    """A complement block (H-bar or P-bar(H - z)P-bar) is numerically singular."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class FlowTruncatedError(RGError):
    """The dilation leak exceeded the configured budget."""


class OutOfPolydiscError(RGError):
    """A spectral parameter left the admissible domain of the E-map."""


class BracketError(RGError):
    """Root finding could not bracket the requested value."""


class NonMonotoneMapError(RGError):
    """Sampled E-map values are not monotone on the bracket."""


class DimensionCapError(RGError):
    """A basis or dense matrix would exceed the configured size cap."""


class BoundaryTieError(RGError):
    """A free-field energy sits within tolerance of a projection boundary."""


class DilationScaleError(RGError):
    """The requested dilation scale is not an integer power of the ladder ratio."""


class ShellAlignmentError(RGError):
    """Kernel momentum nodes do not line up with the ladder shells."""


class ConfigError(RGError):
    exit_code = 2

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
