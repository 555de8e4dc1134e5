"""Per-pixel local ray reference systems and tilted-polarizer angles.

A projective camera sends a different ray direction through every pixel.
Each ray gets its own right-handed orthonormal frame whose z-axis is the
ray itself; Stokes vectors recovered for that pixel live in this frame, and
the frame's rotation matrix maps local vectors back to camera coordinates.

Because the physical polarizers are parallel to the image plane, every
non-central ray crosses them at a tilt. A tilted ideal polarizer behaves
like an aligned one with a different transmission angle: the absorbing axis
expressed in the local frame, crossed with the local z-axis, gives the
effective transmitting axis, and its in-plane angle is the effective
polarizer angle used by the Stokes estimators.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePolarizer, DegenerateRay, SingularIntrinsics

# Cross products below this norm mean the construction is degenerate.
DEGENERACY_EPS = 1e-12


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsic parameters, pixel units.

    ``pixel_offset`` selects the calibration convention for pixel centers:
    0.0 puts the center of pixel (row, col) at image coordinates
    (u, v) = (col, row), 0.5 at (col + 0.5, row + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0
    pixel_offset: float = 0.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "skew", "pixel_offset"):
            if not np.isfinite(getattr(self, name)):
                raise SingularIntrinsics(f"{name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise SingularIntrinsics("fx and fy must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise SingularIntrinsics("width and height must be > 0")

    @property
    def k(self):
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def k_inv(self):
        # Closed-form inverse of the upper-triangular K, exact and branch-free.
        fx, fy, sk = self.fx, self.fy, self.skew
        return np.array([
            [1.0 / fx, -sk / (fx * fy), (sk * self.cy - self.cx * fy) / (fx * fy)],
            [0.0, 1.0 / fy, -self.cy / fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class RayFrame:
    """Orthonormal basis of one ray; columns of ``rotation`` are x, y, z."""

    rotation: np.ndarray

    @property
    def r_x(self):
        return self.rotation[:, 0]

    @property
    def r_y(self):
        return self.rotation[:, 1]

    @property
    def r_z(self):
        return self.rotation[:, 2]


@dataclass(frozen=True)
class RayFrameField:
    """Dense per-pixel ray frames, ``rotation`` of shape (H, W, 3, 3)."""

    rotation: np.ndarray
    intrinsics: Intrinsics = None

    @property
    def shape(self):
        return self.rotation.shape[:2]

    @property
    def r_z(self):
        return self.rotation[..., :, 2]

    def frame_at(self, row, col):
        return RayFrame(rotation=np.array(self.rotation[row, col]))

    @classmethod
    def orthographic(cls, width, height):
        """Identity frames everywhere (parallel rays along +z)."""
        rot = np.broadcast_to(np.eye(3), (height, width, 3, 3))
        return cls(rotation=rot, intrinsics=None)


@dataclass(frozen=True)
class EffectiveAngleField:
    """Per-pixel effective polarizer angles, ``values`` of shape (N, H, W).

    ``nominal`` lists the N nominal angles in the same order. ``trig()``
    returns cached (cos 2a, sin 2a) stacks, computed once and reused by the
    simulator and the estimators.
    """

    nominal: tuple
    values: np.ndarray
    intrinsics: Intrinsics = None
    _trig: list = field(default_factory=lambda: [None], repr=False, compare=False)

    @property
    def shape(self):
        return self.values.shape[1:]

    def trig(self):
        if self._trig[0] is None:
            self._trig[0] = (np.cos(2.0 * self.values), np.sin(2.0 * self.values))
        return self._trig[0]

    @classmethod
    def nominal_everywhere(cls, angles, width, height, intrinsics=None):
        """Orthographic field: every pixel sees the nominal angles."""
        angles = tuple(float(a) for a in angles)
        vals = np.broadcast_to(
            np.mod(np.asarray(angles, dtype=float), np.pi)[:, None, None],
            (len(angles), height, width))
        return cls(nominal=angles, values=vals, intrinsics=intrinsics)


def backproject(k, u, v):
    """Unit ray through image point (u, v), camera coordinates.

    Accepts scalars or arrays; returns shape u.shape + (3,) with a positive
    z component (rays exit through the image plane).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("pixel coordinates must be finite")
    ki = k.k_inv
    d = np.stack([ki[0, 0] * u + ki[0, 1] * v + ki[0, 2],
                  ki[1, 1] * v + ki[1, 2],
                  np.ones_like(u)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _frames_from_rays(rays):
    """Rotation stack (..., 3, 3) with columns (r_x, r_y, ray)."""
    rays = np.asarray(rays, dtype=float)
    a = rays[..., 0]
    c = rays[..., 2]
    # (0,1,0) x ray = (ray_z, 0, -ray_x)
    norm = np.hypot(a, c)
    if np.any(norm < DEGENERACY_EPS):
        raise DegenerateRay("ray parallel to the camera y-axis")
    r_x = np.stack([c / norm, np.zeros_like(a), -a / norm], axis=-1)
    r_y = np.cross(rays, r_x)
    return np.stack([r_x, r_y, rays], axis=-1)


def local_frame(ray):
    """Local frame of a single unit ray (z-axis = ray, x-axis level)."""
    ray = np.asarray(ray, dtype=float)
    if ray.shape != (3,):
        raise ValueError("ray must be a 3-vector")
    return RayFrame(rotation=_frames_from_rays(ray))


def build_frame_field(k):
    """Dense ray-frame field at every pixel center of ``k``."""
    u = np.arange(k.width, dtype=float) + k.pixel_offset
    v = np.arange(k.height, dtype=float) + k.pixel_offset
    uu, vv = np.meshgrid(u, v)
    rays = backproject(k, uu, vv)
    return RayFrameField(rotation=_frames_from_rays(rays), intrinsics=k)


def _effective_angles(rotation, alpha):
    """Effective angle map for one nominal ``alpha`` over a rotation stack."""
    a = float(alpha)
    # Absorbing axis in camera coordinates, orthogonal to the transmission axis.
    v0 = np.cos(a + np.pi / 2.0)
    v1 = np.sin(a + np.pi / 2.0)
    # P_A = R^T v; only its x and y components matter because the effective
    # transmitting axis is t = z_local x P_A = (-P_A_y, P_A_x, 0).
    pa_x = rotation[..., 0, 0] * v0 + rotation[..., 1, 0] * v1
    pa_y = rotation[..., 0, 1] * v0 + rotation[..., 1, 1] * v1
    if np.any(np.hypot(pa_x, pa_y) < DEGENERACY_EPS):
        raise DegeneratePolarizer("absorbing axis parallel to the ray")
    ahat = np.mod(np.arctan2(pa_x, -pa_y), np.pi)
    return np.where(ahat >= np.pi, 0.0, ahat)


def effective_angle(frame, alpha):
    """Effective transmission angle of a polarizer seen through ``frame``."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    return float(_effective_angles(frame.rotation, alpha))


def build_effective_angles(field, angles):
    """Effective angles of every nominal angle at every pixel of ``field``."""
    angles = tuple(float(a) for a in angles)
    if not angles:
        raise ValueError("need at least one nominal angle")
    vals = np.stack([_effective_angles(field.rotation, a) for a in angles])
    return EffectiveAngleField(nominal=angles, values=vals,
                               intrinsics=field.intrinsics)
