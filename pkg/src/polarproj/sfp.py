"""Normal recovery from Stokes maps, plane fitting, and angular metrics.

For dominantly specular reflection, the AoLP of the reflected light equals
the azimuth of the surface normal (up to an unavoidable pi ambiguity, plus
a pi/2 ambiguity when diffuse reflection dominates instead), while the DoLP
relates to the zenith angle through a Fresnel-derived curve with a single
peak at the Brewster angle atan(n). Inverting that curve on one of its two
monotonic branches, combining it with the azimuth candidates, and rotating
the resulting unit normals from each pixel's local frame back to the camera
frame produces the normal field.

All zenith angles are measured between the surface normal and the local
viewing ray: cos(theta) = -n_z in the local frame, with normals facing the
camera (negative local z component).
"""

import functools
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateSystem, DomainError, EmptyMask, FrameMismatch,
                     NoSolution)
from .stokes import FRAME_CAMERA, FRAME_LOCAL, STATUS_VALID

# Pixels with DoLP below this are masked from azimuth-dependent operations
# (AoLP variance diverges as DoLP goes to 0).
UNPOLARIZED_DOLP = 0.005

# Residual tolerance of the zenith-from-DoLP bisection, in DoLP units.
ZENITH_RTOL = 1e-10

# Relative gap between the two smallest singular values below which the
# plane-normal direction is not identifiable.
PLANE_GAP_RTOL = 1e-9

BRANCH_LOW = "low"
BRANCH_HIGH = "high"


@dataclass(frozen=True)
class SpecularDolpModel:
    """Specular DoLP-versus-zenith curve, refractive index n and scale a.

    rho(theta) = a * 2 sin^2(t) cos(t) sqrt(n^2 - sin^2 t)
                   / (n^2 - sin^2 t - n^2 sin^2 t + 2 sin^4 t)

    The scale a absorbs diffuse mixing and Umov-type attenuation. The curve
    rises from 0 at theta = 0 to its single maximum a at the Brewster angle
    atan(n), then falls back to 0 at grazing.
    """

    n: float = 1.5
    a: float = 1.0

    def __post_init__(self):
        if not (self.n > 1.0):
            raise ValueError(f"refractive index must be > 1, got {self.n}")
        if not (0.0 < self.a <= 1.0):
            raise ValueError(f"scale must be in (0, 1], got {self.a}")

    @property
    def theta_peak(self):
        return float(np.arctan(self.n))

    @property
    def rho_peak(self):
        return self.a


@dataclass
class NormalField:
    """Per-pixel unit normals with a validity mask and a frame flag."""

    normals: np.ndarray         # (H, W, 3)
    mask: np.ndarray            # (H, W) bool, True = valid
    frame: str = FRAME_CAMERA

    @property
    def shape(self):
        return self.normals.shape[:2]


@dataclass(frozen=True)
class PlaneEstimate:
    """Fitted plane normal (camera frame, n_z < 0) and fit diagnostics."""

    normal: np.ndarray
    residual: float
    count: int


@dataclass
class AmbiguityCandidateSet:
    """Per-pixel normal candidates, materialized lazily per candidate index.

    Candidates enumerate (azimuth + offset) x (zenith branch). ``clamped``
    marks pixels whose DoLP exceeded the branch peak and was clamped to the
    Brewster zenith.
    """

    azimuth: np.ndarray         # (H, W) base azimuth from AoLP
    zeniths: tuple              # per-branch (H, W) zenith maps
    offsets: tuple              # azimuth offsets, radians
    mask: np.ndarray            # (H, W) bool
    clamped: np.ndarray         # (H, W) bool
    frame: str = FRAME_LOCAL
    rotations: np.ndarray = None  # (H, W, 3, 3), set when frame == camera

    @property
    def count(self):
        return len(self.offsets) * len(self.zeniths)

    @property
    def shape(self):
        return self.azimuth.shape

    def _trig(self):
        if not hasattr(self, "_trig_cache"):
            object.__setattr__(self, "_trig_cache", {
                "phi": (np.cos(self.azimuth), np.sin(self.azimuth)),
                "zen": [(np.sin(z), np.cos(z)) for z in self.zeniths]})
        return self._trig_cache

    def candidate(self, i):
        """Unit-normal field (H, W, 3) of candidate ``i``."""
        trig = self._trig()
        sin_z, cos_z = trig["zen"][i % len(self.zeniths)]
        off = self.offsets[i // len(self.zeniths)]
        c, s = trig["phi"]
        # The offsets are multiples of pi/2, so rotate by sign swaps.
        quarter = round(off / (np.pi / 2)) % 4
        if quarter == 1:
            c, s = -s, c
        elif quarter == 2:
            c, s = -c, -s
        elif quarter == 3:
            c, s = s, -c
        n = np.stack([sin_z * c, sin_z * s, -cos_z], axis=-1)
        if self.frame == FRAME_CAMERA:
            n = np.einsum('hwij,hwj->hwi', self.rotations, n)
        return n

    def __iter__(self):
        return (self.candidate(i) for i in range(self.count))


def _w_form(n, a, w):
    """DoLP as a function of w = sin^2(theta); algebraic, no trig."""
    t2 = n * n - w
    return 2.0 * a * w * np.sqrt((1.0 - w) * t2) / (t2 - n * n * w + 2.0 * w * w)


def dolp_specular(model, theta):
    """Specular DoLP at zenith ``theta`` (scalar or array) in [0, pi/2)."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0) or np.any(theta >= np.pi / 2):
        raise DomainError("zenith must lie in [0, pi/2)")
    n, a = model.n, model.a
    s2 = np.sin(theta) ** 2
    t2 = n * n - s2
    # cos(theta) directly, not sqrt(1 - sin^2), which cancels near grazing
    rho = 2.0 * a * s2 * np.cos(theta) * np.sqrt(t2) \
        / (t2 - n * n * s2 + 2.0 * s2 * s2)
    return float(rho) if rho.ndim == 0 else rho


@functools.lru_cache(maxsize=32)
def _branch_table(n, branch, npts=1 << 18):
    """Monotone (rho, w) sample table of one branch for bracket seeding."""
    w_peak = n * n / (1.0 + n * n)
    if branch == BRANCH_LOW:
        w = np.linspace(0.0, w_peak, npts)
    else:
        w = np.linspace(w_peak, 1.0, npts)
    r = _w_form(n, 1.0, w)
    r[w == w_peak] = 1.0
    r[w == 0.0] = 0.0
    r[w == 1.0] = 0.0
    if branch == BRANCH_HIGH:
        return r[::-1].copy(), w[::-1].copy()
    return r, w


def zenith_from_dolp(model, rho, branch=BRANCH_LOW):
    """Invert the DoLP curve on one monotonic branch by bisection.

    Returns ``(theta, clamped)``. The zenith satisfies
    ``|dolp_specular(model, theta) - rho| <= ZENITH_RTOL`` wherever rho is
    within the branch range; rho above the peak clamps to the Brewster
    zenith with the ``clamped`` flag set. Bisection brackets are seeded
    from a cached monotone table of the branch, so only the few pixels the
    seed leaves outside tolerance iterate.
    """
    if branch not in (BRANCH_LOW, BRANCH_HIGH):
        raise ValueError(f"unknown branch {branch!r}")
    rho_arr = np.asarray(rho, dtype=float)
    scalar = rho_arr.ndim == 0
    rho_arr = np.atleast_1d(rho_arr).astype(float)
    if np.any(rho_arr < 0) or not np.all(np.isfinite(rho_arr)):
        raise NoSolution("DoLP must be finite and >= 0")

    n, a = model.n, model.a
    clamped = rho_arr > a
    target = np.minimum(rho_arr, a) / a

    r_tab, w_tab = _branch_table(n, branch)
    w = np.interp(target, r_tab, w_tab)
    # Bisection polish where the table seed is out of tolerance, plus the
    # near-peak band where the curve is flat and a small DoLP residual does
    # not bound the zenith error.
    resid = _w_form(n, 1.0, w) - target
    tol = ZENITH_RTOL / a
    bad = (np.abs(resid) > tol) | (target > 1.0 - 1e-3)
    if np.any(bad):
        w_peak = n * n / (1.0 + n * n)
        w_min, w_max = (0.0, w_peak) if branch == BRANCH_LOW else (w_peak, 1.0)
        step = abs(float(w_tab[1] - w_tab[0]))
        # The table seed lies within one grid step of the root, and the
        # function is monotone on the clipped bracket.
        lo = np.clip(w[bad] - step, w_min, w_max)
        hi = np.clip(w[bad] + step, w_min, w_max)
        t = target[bad]
        increasing = branch == BRANCH_LOW
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = _w_form(n, 1.0, mid) > t
            if not increasing:
                above = ~above
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if hi[0] - lo[0] < 1e-18:
                break
        w[bad] = 0.5 * (lo + hi)

    theta = np.arcsin(np.sqrt(np.clip(w, 0.0, 1.0)))
    theta[clamped] = model.theta_peak
    if scalar:
        return float(theta[0]), bool(clamped[0])
    return theta, clamped


def polarization_maps(smap, dolp_threshold=UNPOLARIZED_DOLP):
    """AoLP/DoLP maps of a Stokes map plus the valid-pixel mask.

    Pixels are masked out when their solver status is nonzero, s0 <= 0, or
    the DoLP is below ``dolp_threshold``. AoLP is 0 on masked pixels.
    """
    s = smap.values
    s0 = s[..., 0]
    ok = (smap.status == STATUS_VALID) & (s0 > 0)
    safe_s0 = np.where(ok, s0, 1.0)
    rho = np.hypot(s[..., 1], s[..., 2]) / safe_s0
    rho = np.where(ok, rho, 0.0)
    ok &= rho >= dolp_threshold
    phi = np.mod(0.5 * np.arctan2(s[..., 2], s[..., 1]), np.pi)
    phi = np.where(ok & (phi < np.pi), phi, 0.0)
    return phi, np.minimum(rho, 1.0), ok


def normals_local(smap, model, mode="specular", dolp_threshold=UNPOLARIZED_DOLP):
    """Candidate surface normals per pixel, in local ray frames.

    Azimuth candidates are {phi, phi + pi} (specular) plus {phi +- pi/2}
    (diffuse); zenith candidates come from both branches of the DoLP curve,
    giving 4 or 8 candidates. Unpolarized pixels are masked.
    """
    if smap.frame != FRAME_LOCAL:
        raise FrameMismatch("normals_local needs a local-frame Stokes map")
    if mode not in ("specular", "diffuse"):
        raise ValueError(f"unknown mode {mode!r}")
    phi, rho, ok = polarization_maps(smap, dolp_threshold)
    zen_lo, cl_lo = zenith_from_dolp(model, np.where(ok, rho, 0.0), BRANCH_LOW)
    zen_hi, cl_hi = zenith_from_dolp(model, np.where(ok, rho, 0.0), BRANCH_HIGH)
    offsets = (0.0, np.pi)
    if mode == "diffuse":
        offsets = (0.0, np.pi, np.pi / 2, -np.pi / 2)
    return AmbiguityCandidateSet(
        azimuth=phi, zeniths=(zen_lo, zen_hi), offsets=offsets, mask=ok,
        clamped=(cl_lo | cl_hi) & ok, frame=FRAME_LOCAL)


def rotate_normals_to_camera(obj, frames):
    """Rotate a NormalField or candidate set from local frames to camera.

    Applies each pixel's frame rotation; raises :class:`FrameMismatch` when
    the input is already camera-frame.
    """
    if obj.frame != FRAME_LOCAL:
        raise FrameMismatch("input is already in the camera frame")
    if isinstance(obj, AmbiguityCandidateSet):
        if frames.shape != obj.shape:
            raise ValueError("frame field shape mismatch")
        return AmbiguityCandidateSet(
            azimuth=obj.azimuth, zeniths=obj.zeniths, offsets=obj.offsets,
            mask=obj.mask, clamped=obj.clamped, frame=FRAME_CAMERA,
            rotations=frames.rotation)
    if isinstance(obj, NormalField):
        if frames.shape != obj.shape:
            raise ValueError("frame field shape mismatch")
        rotated = np.einsum('hwij,hwj->hwi', frames.rotation, obj.normals)
        return NormalField(normals=rotated, mask=obj.mask, frame=FRAME_CAMERA)
    raise TypeError(f"cannot rotate {type(obj).__name__}")


def oracle_disambiguate(candidates, gt):
    """Select, per pixel, the candidate closest in angle to ground truth.

    ``gt`` is a NormalField, an (H, W, 3) array, or a single 3-vector in the
    same frame as the candidates. Masked pixels keep a zero normal.
    """
    if isinstance(gt, NormalField):
        if gt.frame != candidates.frame:
            raise FrameMismatch("candidates and ground truth frames differ")
        gt_n = gt.normals
    else:
        gt_n = np.asarray(gt, dtype=float)
    single = gt_n.shape == (3,)
    best = None
    best_dot = None
    for cand in candidates:
        if single:
            dot = cand @ gt_n
        else:
            dot = np.einsum('hwi,hwi->hw', cand, gt_n)
        if best is None:
            best, best_dot = cand, dot
        else:
            upd = dot > best_dot
            best[upd] = cand[upd]
            best_dot = np.maximum(best_dot, dot)
    best[~candidates.mask] = 0.0
    return NormalField(normals=best, mask=candidates.mask.copy(),
                       frame=candidates.frame)


def estimate_plane_normal(aolp_map, frames, mask=None):
    """Plane normal from per-pixel AoLP constraints, camera frame.

    Each valid pixel contributes the homogeneous row
    ``(sin phi, -cos phi, 0) R_j^T``, which annihilates any normal whose
    local-frame azimuth equals phi modulo pi; the plane normal is the right
    singular vector of the stacked system with the smallest singular value,
    sign-fixed to n_z < 0. Raises :class:`DegenerateSystem` when the
    direction is not identifiable, which is exactly the orthographic case
    where all rays are parallel and every pixel sees the same AoLP.
    """
    aolp_map = np.asarray(aolp_map, dtype=float)
    if mask is None:
        mask = np.ones(aolp_map.shape, dtype=bool)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyMask("no pixels selected for plane estimation")
    if count < 3:
        raise DegenerateSystem(f"need >= 3 pixels, got {count}")
    rot = frames.rotation[mask]
    # Parallel rays leave the constraint rows confined to a fixed plane and
    # the fit insensitive to the data, no matter how the AoLP varies.
    rays = rot[:, :, 2]
    if float(1.0 - np.min(rays @ rays[0])) < 1e-12:
        raise DegenerateSystem(
            "all selected rays are parallel (orthographic geometry)")
    phi = aolp_map[mask]
    # row in camera coordinates: v^T R^T = (R v)^T with v = (sin, -cos, 0)
    v = np.stack([np.sin(phi), -np.cos(phi), np.zeros_like(phi)], axis=-1)
    rows = np.einsum('pij,pj->pi', rot, v)
    # Tall-skinny QR first keeps the SVD cheap and deterministic.
    r = np.linalg.qr(rows, mode='r')
    _, sing, vt = np.linalg.svd(r)
    if sing[1] - sing[2] < PLANE_GAP_RTOL * max(sing[0], np.finfo(float).tiny):
        raise DegenerateSystem(
            "plane direction not identifiable (parallel rays or constant AoLP)")
    normal = vt[2]
    if normal[2] > 0 or (normal[2] == 0 and
                         (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0))):
        normal = -normal
    return PlaneEstimate(normal=normal, residual=float(sing[2] / np.sqrt(count)),
                         count=count)


@dataclass(frozen=True)
class ErrorStats:
    """Mean absolute, root-mean-square and standard deviation, radians."""

    mae: float
    rmse: float
    std: float

    def degrees(self):
        return ErrorStats(*(float(np.degrees(x)) for x in
                            (self.mae, self.rmse, self.std)))


_PERIODS = {"none": 2.0 * np.pi, "pi": np.pi, "pi_and_half_pi": np.pi / 2}


def angular_errors(est, gt, ambiguity="none", mask=None, kind=None):
    """Per-element angular distances between ``est`` and ``gt``.

    Angle maps use circular distance with the period selected by the
    ambiguity mode; 3-vector fields use the great-circle angle, with the
    'pi' mode folding the sign ambiguity n ~ -n. ``kind`` forces 'angle'
    or 'normal' interpretation; by default (H, W, 3) stacks are normals.
    """
    if isinstance(est, NormalField):
        est = est.normals
        kind = kind or "normal"
    if isinstance(gt, NormalField):
        gt = gt.normals
        kind = kind or "normal"
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if ambiguity not in _PERIODS:
        raise ValueError(f"unknown ambiguity mode {ambiguity!r}")
    if kind is None:
        kind = "normal" if (est.ndim == 3 and est.shape[-1] == 3
                            and gt.shape[-1] == 3) else "angle"
    if kind == "normal":
        dot = np.clip(np.einsum('...i,...i->...', est, gt), -1.0, 1.0)
        d = np.arccos(dot)
        if ambiguity != "none":
            d = np.minimum(d, np.pi - d)
    else:
        if est.shape != gt.shape:
            raise ValueError("shape mismatch between estimate and ground truth")
        period = _PERIODS[ambiguity]
        d = np.abs(est - gt) % period
        d = np.minimum(d, period - d)
    if mask is not None:
        d = d[mask]
    if d.size == 0:
        raise EmptyMask("no pixels left after masking")
    return d


def angular_error_stats(est, gt, ambiguity="none", mask=None, kind=None):
    """MAE / RMSE / stddev of angular distances, in radians."""
    d = angular_errors(est, gt, ambiguity, mask, kind)
    return ErrorStats(mae=float(d.mean()),
                      rmse=float(np.sqrt(np.mean(d * d))),
                      std=float(d.std()))


def fit_dolp_model(dolp_values, zenith_values, mask=None,
                   n_range=(1.05, 2.4), refine_iters=80):
    """Fit (n, a) of the specular DoLP model to observed (zenith, DoLP) pairs.

    For a fixed n the optimal scale is the closed-form linear regression
    coefficient, so the search is a golden-section scan over n alone,
    seeded by a coarse grid.
    """
    rho = np.asarray(dolp_values, dtype=float)
    zen = np.asarray(zenith_values, dtype=float)
    if mask is not None:
        rho, zen = rho[mask], zen[mask]
    rho, zen = rho.ravel(), zen.ravel()
    if rho.size == 0:
        raise EmptyMask("no samples to fit")
    w = np.sin(zen) ** 2

    def sse_and_a(n):
        g = _w_form(n, 1.0, w)
        denom = float(g @ g)
        a = float(np.clip((g @ rho) / denom, 1e-6, 1.0)) if denom > 0 else 1.0
        r = a * g - rho
        return float(r @ r), a

    grid = np.linspace(n_range[0], n_range[1], 64)
    sses = [sse_and_a(n)[0] for n in grid]
    i = int(np.argmin(sses))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = sse_and_a(c)[0], sse_and_a(d)[0]
    for _ in range(refine_iters):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = sse_and_a(c)[0]
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = sse_and_a(d)[0]
        if hi - lo < 1e-12:
            break
    n_best = 0.5 * (lo + hi)
    _, a_best = sse_and_a(n_best)
    return SpecularDolpModel(n=float(n_best), a=float(a_best))
