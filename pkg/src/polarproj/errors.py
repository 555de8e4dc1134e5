"""Exception hierarchy shared by all polarproj modules.

Every error raised by the library derives from :class:`PolarprojError` so
callers (and the CLI) can map failures to exit codes by category:
configuration/schema problems, numeric/compute problems, and degenerate
geometry.
"""


class PolarprojError(Exception):
    """Base class for all polarproj errors."""


# --- configuration / schema ------------------------------------------------

class SchemaError(PolarprojError):
    """A configuration document violates its schema.

    ``field`` holds the dotted path of the offending entry.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnsupportedFormat(PolarprojError):
    """File is syntactically recognizable but not a supported format."""


class CorruptFile(PolarprojError):
    """File claims a supported format but its payload is inconsistent."""


# --- numeric / compute -----------------------------------------------------

class ZeroIntensity(PolarprojError):
    """Operation requires s0 > 0."""


class UndefinedAngle(PolarprojError):
    """AoLP requested for light with no linear polarization component."""


class RealizabilityError(PolarprojError):
    """Stokes vector violates s0^2 >= s1^2 + s2^2 + s3^2 beyond tolerance."""


class RankDeficient(PolarprojError):
    """Per-pixel design matrix has rank < 3 (scalar entry points only;
    dense estimators record this in the status mask instead)."""


class LayoutMismatch(PolarprojError):
    """Mosaic window does not cover at least 3 distinct polarizer angles."""


class FrameMismatch(PolarprojError):
    """Input is expressed in the wrong reference-frame convention."""


class DomainError(PolarprojError):
    """Argument outside the mathematical domain of the operation."""


class NoSolution(PolarprojError):
    """Inversion target admits no solution (for example negative DoLP)."""


class EmptyMask(PolarprojError):
    """Statistic requested over an empty pixel set."""


# --- degenerate geometry ---------------------------------------------------

class GeometryError(PolarprojError):
    """Base class for degenerate-geometry failures (CLI exit code 4)."""


class SingularIntrinsics(GeometryError):
    """Intrinsic matrix is not invertible."""


class DegenerateRay(GeometryError):
    """Ray parallel to the camera y-axis; local frame undefined."""


class DegeneratePolarizer(GeometryError):
    """Absorbing axis parallel to the ray; effective angle undefined."""


class DegenerateSystem(GeometryError):
    """Homogeneous system has no identifiable null direction."""


class InvisiblePlane(GeometryError):
    """Scene plane is not in front of the camera."""
