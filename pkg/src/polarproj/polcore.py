"""Stokes vector and Mueller matrix algebra for linear polarization.

Conventions
-----------
All angles are radians. Image frames have x pointing right, y pointing
down, and z along the direction of propagation, so polarization angles are
measured *clockwise* from the x-axis when drawn on the image. Every formula
below is written in the coordinates of its own frame; as long as each frame
is right-handed with z along propagation, the identical expressions apply
in the camera frame and in any per-ray local frame, and no sign patch is
needed anywhere downstream.

The degree of linear polarization is ``sqrt(s1^2 + s2^2 + s3^2) / s0`` and
the angle of linear polarization is ``atan2(s2, s1) / 2``, reduced to
[0, pi). Beware of two common shorthands in the literature: DoLP printed
without the squares (dimensionally inconsistent) and AoLP printed without
the 1/2 factor (inconsistent with the cos(2a - 2phi) intensity sinusoid).
The consistent forms are used throughout.

Stokes vectors are plain arrays of shape (..., 4) in linear radiometric
units; Mueller matrices are plain arrays of shape (..., 4, 4). The
:class:`StokesVector` dataclass offers a validated scalar wrapper that
converts transparently through ``numpy.asarray``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import config
from .errors import RealizabilityError, UndefinedAngle, ZeroIntensity

# DoLP values in (1, 1 + DOLP_CLAMP_TOL] clamp silently to 1; larger values
# raise in strict mode and clamp with a warning otherwise.
DOLP_CLAMP_TOL = 1e-6

# Relative tolerance of the realizability invariant s0^2 >= s1^2+s2^2+s3^2.
REALIZABILITY_RTOL = 1e-9


@dataclass(frozen=True)
class StokesVector:
    """A single physically realizable Stokes vector (s0, s1, s2, s3)."""

    s0: float
    s1: float
    s2: float = 0.0
    s3: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.s0, self.s1, self.s2, self.s3])):
            raise RealizabilityError("Stokes components must be finite")
        if self.s0 < 0:
            raise RealizabilityError(f"s0 must be >= 0, got {self.s0}")
        pol2 = self.s1 ** 2 + self.s2 ** 2 + self.s3 ** 2
        if pol2 > self.s0 ** 2 * (1.0 + REALIZABILITY_RTOL):
            raise RealizabilityError(
                f"polarized power {pol2} exceeds s0^2 = {self.s0 ** 2}")

    def as_array(self):
        return np.array([self.s0, self.s1, self.s2, self.s3], dtype=float)

    def __array__(self, dtype=None, copy=None):
        a = self.as_array()
        return a.astype(dtype) if dtype is not None else a


@dataclass(frozen=True)
class PolarizationSummary:
    """Intensity, DoLP in [0, 1] and AoLP in [0, pi) of a Stokes vector."""

    intensity: float
    dolp: float
    aolp: float


@dataclass(frozen=True)
class SinusoidParams:
    """Extrema and phase of the polarizer-sweep intensity sinusoid.

    Predicted intensity through an ideal polarizer at angle ``a`` is
    ``(i_max + i_min)/2 + (i_max - i_min)/2 * cos(2a - 2*phase)``.
    """

    i_max: float
    i_min: float
    phase: float


def _stokes(s):
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != 4:
        raise ValueError(f"Stokes array must have last dimension 4, got {s.shape}")
    return s


def linear_polarizer_mueller(alpha):
    """Mueller matrix of an ideal linear polarizer.

    Parameters
    ----------
    alpha : float or array
        Transmission-axis angle from the frame x-axis, radians.

    Returns
    -------
    array of shape alpha.shape + (4, 4). The matrix is idempotent.
    """
    alpha = np.asarray(alpha, dtype=float)
    c = np.cos(2.0 * alpha)
    s = np.sin(2.0 * alpha)
    one = np.ones_like(c)
    zero = np.zeros_like(c)
    m = np.stack([
        np.stack([one, c, s, zero], axis=-1),
        np.stack([c, c * c, s * c, zero], axis=-1),
        np.stack([s, s * c, s * s, zero], axis=-1),
        np.stack([zero, zero, zero, zero], axis=-1),
    ], axis=-2)
    return 0.5 * m


def rotator_mueller(theta):
    """Stokes frame-rotation matrix about the propagation axis.

    Satisfies ``rotator_mueller(t).T @ linear_polarizer_mueller(0)
    @ rotator_mueller(t) == linear_polarizer_mueller(t)`` and is pi-periodic
    because Stokes frames are defined modulo a half turn.
    """
    theta = np.asarray(theta, dtype=float)
    c = np.cos(2.0 * theta)
    s = np.sin(2.0 * theta)
    one = np.ones_like(c)
    zero = np.zeros_like(c)
    return np.stack([
        np.stack([one, zero, zero, zero], axis=-1),
        np.stack([zero, c, s, zero], axis=-1),
        np.stack([zero, -s, c, zero], axis=-1),
        np.stack([zero, zero, zero, one], axis=-1),
    ], axis=-2)


def apply_mueller(m, s):
    """Apply Mueller matrix ``m`` (..., 4, 4) to Stokes ``s`` (..., 4)."""
    m = np.asarray(m, dtype=float)
    s = _stokes(s)
    return np.einsum('...ij,...j->...i', m, s)


def _clamped_dolp(rho, what="DoLP"):
    worst = float(np.max(rho)) if rho.size else 0.0
    if worst > 1.0 + DOLP_CLAMP_TOL:
        if config.is_strict():
            raise RealizabilityError(f"{what} {worst:.9g} exceeds 1 beyond tolerance")
        warnings.warn(f"{what} {worst:.9g} exceeds 1 beyond tolerance, clamping",
                      RuntimeWarning, stacklevel=3)
    return np.minimum(rho, 1.0)


def dolp(s):
    """Degree of linear polarization, sqrt(s1^2+s2^2+s3^2)/s0 in [0, 1].

    Values exceeding 1 by at most ``DOLP_CLAMP_TOL`` clamp silently (float
    noise); larger excesses raise :class:`RealizabilityError` in strict mode
    and clamp with a warning otherwise. Raises :class:`ZeroIntensity` when
    any s0 <= 0.
    """
    s = _stokes(s)
    s0 = s[..., 0]
    if np.any(s0 <= 0):
        raise ZeroIntensity("dolp requires s0 > 0")
    rho = np.sqrt(s[..., 1] ** 2 + s[..., 2] ** 2 + s[..., 3] ** 2) / s0
    rho = _clamped_dolp(np.asarray(rho))
    return float(rho) if rho.ndim == 0 else rho


def aolp(s):
    """Angle of linear polarization, atan2(s2, s1)/2 reduced to [0, pi).

    Raises :class:`UndefinedAngle` when s1 = s2 = 0 anywhere.
    """
    s = _stokes(s)
    s1 = s[..., 1]
    s2 = s[..., 2]
    if np.any((s1 == 0) & (s2 == 0)):
        raise UndefinedAngle("AoLP undefined for s1 = s2 = 0")
    phi = np.mod(0.5 * np.arctan2(s2, s1), np.pi)
    # mod can return pi when the argument is a tiny negative number
    phi = np.where(phi >= np.pi, 0.0, phi)
    return float(phi) if phi.ndim == 0 else phi


def mixture_decompose(s):
    """Split Stokes into an unpolarized and a fully polarized part.

    Returns ``(unpolarized, polarized)`` with
    ``unpolarized = ((1-rho)*s0, 0, 0, 0)`` and
    ``polarized = (rho*s0, s1, s2, s3)``; their sum reconstructs ``s``.
    """
    s = _stokes(s)
    rho = np.asarray(dolp(s))
    unpol = np.zeros_like(s)
    unpol[..., 0] = (1.0 - rho) * s[..., 0]
    pol = s.copy()
    pol[..., 0] = rho * s[..., 0]
    return unpol, pol


def intensity_through_polarizer(s, alpha):
    """Intensity behind an ideal polarizer at angle ``alpha``.

    This is the first Mueller row applied to ``s``:
    ``0.5 * (s0 + s1*cos(2a) + s2*sin(2a))``.
    """
    s = _stokes(s)
    alpha = np.asarray(alpha, dtype=float)
    return 0.5 * (s[..., 0] + s[..., 1] * np.cos(2.0 * alpha)
                  + s[..., 2] * np.sin(2.0 * alpha))


def sinusoid_params(s):
    """Extrema/phase form of the polarizer intensity sweep.

    ``i_max = (s0 + L)/2`` and ``i_min = (s0 - L)/2`` with
    ``L = sqrt(s1^2 + s2^2)``; the phase is the AoLP (0 when the linear
    component vanishes and the sweep is flat). The linear DoLP equals
    ``(i_max - i_min) / (i_max + i_min)``.
    """
    s = _stokes(s)
    if s.ndim != 1:
        raise ValueError("sinusoid_params expects a single Stokes vector")
    s0 = s[0]
    if s0 <= 0:
        raise ZeroIntensity("sinusoid_params requires s0 > 0")
    lin = float(np.hypot(s[1], s[2]))
    lin = float(_clamped_dolp(np.asarray(lin / s0), "linear DoLP")) * s0
    phase = 0.0 if (s[1] == 0 and s[2] == 0) else aolp(s)
    return SinusoidParams(i_max=0.5 * (s0 + lin), i_min=0.5 * (s0 - lin),
                          phase=phase)


def polarization_summary(s):
    """Bundle intensity, DoLP and AoLP of one Stokes vector."""
    s = _stokes(s)
    if s.ndim != 1:
        raise ValueError("polarization_summary expects a single Stokes vector")
    return PolarizationSummary(intensity=float(s[0]), dolp=dolp(s), aolp=aolp(s))
