"""Forward rendering oracle for synthetic polarimetric captures.

Renders what a projective polarimetric camera observes of a known scene,
through the full tilted-polarizer model, and returns the raw capture
together with dense ground truth (per-pixel Stokes in local frames, camera
frame normals, AoLP/DoLP). Scenes are single-bounce with unpolarized
illumination: a glossy plane whose specular DoLP follows the
:class:`~polarproj.sfp.SpecularDolpModel` curve, or a uniform Stokes field
for unit tests. Given the same scene, intrinsics, sensor and seed, the
output is bit-identical.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvisiblePlane
from .rayframes import build_frame_field, build_effective_angles, \
    EffectiveAngleField
from .sfp import SpecularDolpModel, dolp_specular
from .stokes import MosaicCapture, MosaicLayout, MultishotCapture

ANGLE_MODEL_PROJECTIVE = "projective"
ANGLE_MODEL_ORTHO = "ortho"


@dataclass(frozen=True)
class SceneSpec:
    """Scene description: a tilted glossy plane or a uniform Stokes field."""

    kind: str = "plane"
    normal: tuple = (0.0, 0.0, -1.0)   # unit, camera frame, n_z < 0
    distance: float = 1.0              # plane point at (0, 0, distance)
    mode: str = "specular"
    model: SpecularDolpModel = field(default_factory=SpecularDolpModel)
    s0_base: float = 1.0
    stokes: tuple = None               # uniform scenes: constant (s0, s1, s2)

    def __post_init__(self):
        if self.kind not in ("plane", "uniform"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.mode not in ("specular", "diffuse"):
            raise ValueError(f"unknown reflection mode {self.mode!r}")
        if self.kind == "plane":
            n = np.asarray(self.normal, dtype=float)
            nrm = np.linalg.norm(n)
            if nrm == 0:
                raise ValueError("plane normal must be nonzero")
            n = n / nrm
            if n[2] >= 0:
                raise ValueError("plane normal must face the camera (n_z < 0)")
            object.__setattr__(self, "normal", tuple(n))
            if self.distance <= 0:
                raise InvisiblePlane("plane distance must be > 0")
            if self.s0_base <= 0:
                raise ValueError("s0_base must be > 0")
        else:
            s = np.asarray(self.stokes, dtype=float)
            if s.shape not in ((3,), (4,)):
                raise ValueError("uniform scene needs a (s0, s1, s2[, 0]) tuple")
            if s.shape == (4,) and s[3] != 0:
                raise ValueError("circular component must be 0")
            if s[0] <= 0 or s[1] ** 2 + s[2] ** 2 > s[0] ** 2 * (1 + 1e-9):
                raise ValueError("uniform Stokes field must be physically "
                                 "realizable with s0 > 0")
            object.__setattr__(self, "stokes", tuple(s[:3]))

    @classmethod
    def plane(cls, normal, distance=1.0, mode="specular",
              model=None, s0_base=1.0):
        return cls(kind="plane", normal=tuple(normal), distance=distance,
                   mode=mode, model=model or SpecularDolpModel(),
                   s0_base=s0_base)

    @classmethod
    def uniform(cls, stokes):
        return cls(kind="uniform", stokes=tuple(stokes))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise and uniform quantization, both optional.

    ``gaussian_sigma`` is a fraction of full scale (s0_base);
    ``quantization_bits`` 0 disables rounding. Rendering is deterministic
    given ``seed``; the generator is counter-based (Philox) so the draw
    does not depend on evaluation order.
    """

    gaussian_sigma: float = 0.0
    quantization_bits: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if self.quantization_bits != 0 and not (8 <= self.quantization_bits <= 16):
            raise ValueError("quantization_bits must be 0 or in 8..16")


@dataclass
class GroundTruth:
    """Oracle payload rendered alongside a capture."""

    stokes: np.ndarray          # (H, W, 3), local frames
    normals: np.ndarray         # (H, W, 3) camera frame, None for uniform scenes
    aolp: np.ndarray            # (H, W), local convention, [0, pi)
    dolp: np.ndarray            # (H, W)
    mask: np.ndarray            # (H, W) bool, visible pixels
    dolp_clipped: np.ndarray    # (H, W) bool, rho clipped into [0, 1]
    frames: object = None       # RayFrameField used for the render
    eff_angles: object = None   # EffectiveAngleField used for the render


def _plane_fields(scene, frames):
    """Per-pixel zenith/azimuth/DoLP/Stokes of a plane scene."""
    rot = frames.rotation
    n_cam = np.asarray(scene.normal)
    # n_local = R^T n
    n_loc = np.einsum('hwki,k->hwi', rot, n_cam)
    cos_zen = -n_loc[..., 2]
    visible = cos_zen > 1e-12
    if not np.any(visible):
        raise InvisiblePlane("plane is nowhere front-facing in the image")
    zen = np.arccos(np.clip(cos_zen, -1.0, 1.0))
    azim = np.arctan2(n_loc[..., 1], n_loc[..., 0])
    phi = azim if scene.mode == "specular" else azim + np.pi / 2
    safe_zen = np.where(visible, zen, 0.0)
    rho = dolp_specular(scene.model, np.minimum(safe_zen, np.pi / 2 - 1e-12))
    clipped = rho > 1.0
    rho = np.clip(rho, 0.0, 1.0)
    s = np.empty(zen.shape + (3,))
    s[..., 0] = scene.s0_base
    s[..., 1] = scene.s0_base * rho * np.cos(2.0 * phi)
    s[..., 2] = scene.s0_base * rho * np.sin(2.0 * phi)
    s[~visible] = 0.0
    return s, np.mod(phi, np.pi), rho, visible, clipped


def _ground_truth(scene, frames):
    h, w = frames.shape
    if scene.kind == "plane":
        s, aolp, rho, visible, clipped = _plane_fields(scene, frames)
        normals = np.broadcast_to(np.asarray(scene.normal), (h, w, 3))
    else:
        s = np.broadcast_to(np.asarray(scene.stokes, dtype=float), (h, w, 3)).copy()
        lin = np.hypot(s[..., 1], s[..., 2])
        with np.errstate(invalid="ignore"):
            rho = np.where(s[..., 0] > 0, lin / np.where(s[..., 0] > 0, s[..., 0], 1.0), 0.0)
        aolp = np.where(lin > 0, np.mod(0.5 * np.arctan2(s[..., 2], s[..., 1]), np.pi), 0.0)
        visible = np.ones((h, w), dtype=bool)
        clipped = np.zeros((h, w), dtype=bool)
        normals = None
    return GroundTruth(stokes=s, normals=normals, aolp=aolp, dolp=rho,
                       mask=visible, dolp_clipped=clipped, frames=frames)


def _shot_intensity(s, cos2, sin2):
    return 0.5 * (s[..., 0] + s[..., 1] * cos2 + s[..., 2] * sin2)


def _degrade(images, scene, noise):
    if noise is None:
        return images
    out = images
    if noise.gaussian_sigma > 0:
        rng = np.random.Generator(np.random.Philox(key=noise.seed))
        out = out + rng.normal(0.0, noise.gaussian_sigma * scene.s0_base,
                               size=out.shape)
        out = np.maximum(out, 0.0)  # sensors do not report negative counts
    if noise.quantization_bits:
        levels = (1 << noise.quantization_bits) - 1
        out = np.round(np.clip(out / scene.s0_base, 0.0, 1.0) * levels) \
            / levels * scene.s0_base
    return out


def simulate_capture(scene, k, sensor, noise=None,
                     angle_model=ANGLE_MODEL_PROJECTIVE):
    """Render a raw capture of ``scene`` through intrinsics ``k``.

    Parameters
    ----------
    sensor : MosaicLayout for a DoFP mosaic render, or a sequence of
        nominal angles for a multishot (DoT) render.
    noise : optional NoiseSpec applied after the noise-free render.
    angle_model : 'projective' renders through per-pixel effective angles
        (the physically faithful model); 'ortho' forces nominal angles and
        identity frames, for baseline comparisons.

    Returns
    -------
    (capture, ground_truth)
    """
    frames = build_frame_field(k)
    gt = _ground_truth(scene, frames)
    s = gt.stokes

    mosaic = isinstance(sensor, MosaicLayout)
    angles = sensor.angles if mosaic else tuple(float(a) for a in sensor)
    if angle_model == ANGLE_MODEL_PROJECTIVE:
        eff = build_effective_angles(frames, angles)
    elif angle_model == ANGLE_MODEL_ORTHO:
        eff = EffectiveAngleField.nominal_everywhere(angles, k.width, k.height, k)
    else:
        raise ValueError(f"unknown angle model {angle_model!r}")
    cos2, sin2 = eff.trig()

    if mosaic:
        idx = sensor.index_image(k.height, k.width)
        own_cos = np.take_along_axis(cos2, idx[None], axis=0)[0]
        own_sin = np.take_along_axis(sin2, idx[None], axis=0)[0]
        img = _degrade(_shot_intensity(s, own_cos, own_sin), scene, noise)
        capture = MosaicCapture(image=img, layout=sensor)
    else:
        shots = np.stack([_shot_intensity(s, cos2[i], sin2[i])
                          for i in range(len(angles))])
        shots = _degrade(shots, scene, noise)
        capture = MultishotCapture(images=shots, angles=angles)
    if angle_model == ANGLE_MODEL_PROJECTIVE:
        gt.eff_angles = eff
    return capture, gt


def render_expected_aolp(scene, k, model=ANGLE_MODEL_PROJECTIVE):
    """Model-predicted AoLP map of a plane scene, plus its ground truth.

    'ortho' predicts the constant azimuth of the plane normal in the camera
    frame; 'projective' predicts the per-pixel local-frame AoLP, which
    varies across the image for any tilted plane.
    """
    if scene.kind != "plane":
        raise ValueError("expected-AoLP rendering is defined for plane scenes")
    frames = build_frame_field(k)
    gt = _ground_truth(scene, frames)
    if model == ANGLE_MODEL_PROJECTIVE:
        return gt.aolp.copy(), gt
    if model == ANGLE_MODEL_ORTHO:
        n = np.asarray(scene.normal)
        phi = np.arctan2(n[1], n[0])
        if scene.mode == "diffuse":
            phi += np.pi / 2
        return np.full(frames.shape, np.mod(phi, np.pi)), gt
    raise ValueError(f"unknown model {model!r}")
