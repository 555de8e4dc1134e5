"""Per-pixel Stokes estimation from raw captures and ideal-image synthesis.

Every pixel j observes intensities through one or more linear polarizers.
Stacking one Mueller first row per observation gives an N x 3 system in
(s0, s1, s2); solving it with the pixel's *effective* polarizer angles
compensates the tilted-polarizer distortion of a projective camera and
yields the Stokes vector in the pixel's local ray frame. The same solve,
fed with the raw mosaic neighborhood of a DoFP sensor, doubles as the
demosaicing step. Synthesizing ideal-polarizer images from the recovered
map restores the orthogonal-pair constraint I0 + I90 = I45 + I135 that raw
tilted-polarizer images violate.

The per-pixel solver is an orthogonal-factorization least squares
(vectorized Householder QR over all pixels); normal equations are avoided.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutMismatch, FrameMismatch
from .rayframes import EffectiveAngleField, Intrinsics

STATUS_VALID = 0
STATUS_RANK_DEFICIENT = 1
STATUS_SATURATED = 2

# Rank threshold: smallest |R| diagonal below this fraction of the largest.
RANK_RTOL = 1e-10

# Pixels per chunk in the batched solver, bounds peak temporary memory.
_CHUNK = 1 << 19

FRAME_LOCAL = "local"
FRAME_CAMERA = "camera"


def _circular_distinct(angles, tol=1e-9):
    """Count angles distinct modulo pi."""
    a = np.sort(np.mod(np.asarray(angles, dtype=float), np.pi))
    if a.size == 0:
        return 0
    gaps = np.diff(a)
    wrap = (a[0] + np.pi) - a[-1]
    return int(np.count_nonzero(gaps > tol) + (1 if wrap > tol else 0)) or 1


@dataclass(frozen=True)
class MosaicLayout:
    """2x2 micro-polarizer pattern of a DoFP sensor, angles in radians.

    ``pattern[r][c]`` is the nominal angle at pixels with row parity r and
    column parity c after applying ``parity`` offsets. The default matches
    IMX250MZR-class sensors: [[90, 45], [135, 0]] degrees.
    """

    pattern: tuple = ((np.pi / 2, np.pi / 4), (3 * np.pi / 4, 0.0))
    parity: tuple = (0, 0)

    def __post_init__(self):
        p = np.asarray(self.pattern, dtype=float)
        if p.shape != (2, 2):
            raise LayoutMismatch("mosaic pattern must be 2x2")
        if _circular_distinct(p.ravel()) != 4:
            raise LayoutMismatch("mosaic angles must be distinct modulo pi")
        object.__setattr__(self, "pattern",
                           tuple(tuple(float(x) for x in row) for row in p))
        object.__setattr__(self, "parity",
                           (int(self.parity[0]) % 2, int(self.parity[1]) % 2))

    @property
    def angles(self):
        """The four nominal angles in row-major pattern order."""
        return tuple(a for row in self.pattern for a in row)

    def index_image(self, height, width):
        """Per-pixel index into ``angles`` for an image of the given size."""
        rr = (np.arange(height)[:, None] + self.parity[0]) % 2
        cc = (np.arange(width)[None, :] + self.parity[1]) % 2
        return (rr * 2 + cc).astype(np.intp)

    def angle_image(self, height, width):
        return np.asarray(self.angles)[self.index_image(height, width)]


@dataclass(frozen=True)
class MultishotCapture:
    """Division-of-time capture: one full image per nominal angle."""

    images: np.ndarray          # (N, H, W), linear intensities >= 0
    angles: tuple               # N nominal angles, radians
    saturation: float = None    # sensor maximum; None disables dropping

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=float)
        if imgs.ndim != 3 or imgs.shape[0] != len(self.angles):
            raise ValueError("images must be (N, H, W) matching angles")
        if imgs.min() < 0:
            raise ValueError("intensities must be >= 0")
        if len(self.angles) < 3 or _circular_distinct(self.angles) < 3:
            raise ValueError("multishot needs >= 3 distinct angles modulo pi")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

    @property
    def shape(self):
        return self.images.shape[1:]


@dataclass(frozen=True)
class MosaicCapture:
    """Single DoFP mosaic frame plus its micro-polarizer layout."""

    image: np.ndarray           # (H, W), linear intensities >= 0
    layout: MosaicLayout = field(default_factory=MosaicLayout)
    saturation: float = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 2:
            raise ValueError("mosaic image must be 2-D")
        if img.min() < 0:
            raise ValueError("intensities must be >= 0")
        object.__setattr__(self, "image", img)

    @property
    def shape(self):
        return self.image.shape


@dataclass
class StokesMap:
    """Per-pixel Stokes estimates (s3 is identically zero).

    ``values`` has shape (H, W, 3) holding (s0, s1, s2); ``frame`` records
    whether vectors live in per-pixel local frames or in the camera frame;
    ``status`` is 0 valid, 1 rank-deficient, 2 saturated-degraded.
    """

    values: np.ndarray
    frame: str
    status: np.ndarray = None
    intrinsics: Intrinsics = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[-1] != 3:
            raise ValueError("values must be (H, W, 3)")
        if self.frame not in (FRAME_LOCAL, FRAME_CAMERA):
            raise ValueError(f"unknown frame convention {self.frame!r}")
        if self.status is None:
            self.status = np.zeros(self.values.shape[:2], dtype=np.uint8)

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def s0(self):
        return self.values[..., 0]

    def stokes4(self):
        """(H, W, 4) view-like array with the zero s3 channel appended."""
        out = np.zeros(self.values.shape[:2] + (4,))
        out[..., :3] = self.values
        return out


def _solve_stacked_lls(a, b):
    """Least squares for a stack of small systems via Householder QR.

    Parameters
    ----------
    a : (B, N, 3) design matrices (destroyed)
    b : (B, N) right-hand sides (destroyed)

    Returns
    -------
    x : (B, 3) solutions (zero where rank deficient)
    ok : (B,) bool, False where the R diagonal signals rank < 3
    """
    bsz, n, k = a.shape
    for col in range(k):
        x = a[:, col:, col]
        nrm = np.sqrt(np.einsum('bi,bi->b', x, x))
        alpha = -np.copysign(nrm, x[:, 0])
        v = x.copy()
        v[:, 0] -= alpha
        beta = np.einsum('bi,bi->b', v, v)
        live = beta > 0
        w = np.where(live, 2.0 / np.where(live, beta, 1.0), 0.0)
        va = np.einsum('bi,bij->bj', v, a[:, col:, col:])
        a[:, col:, col:] -= (w[:, None] * v)[:, :, None] * va[:, None, :]
        vb = np.einsum('bi,bi->b', v, b[:, col:])
        b[:, col:] -= (w * vb)[:, None] * v
        a[:, col, col] = np.where(live, alpha, x[:, 0])

    diag = np.abs(np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=-1))
    dmax = diag.max(axis=-1)
    ok = (dmax > 0) & (diag.min(axis=-1) >= RANK_RTOL * dmax)

    r00 = np.where(ok, a[:, 0, 0], 1.0)
    r11 = np.where(ok, a[:, 1, 1], 1.0)
    r22 = np.where(ok, a[:, 2, 2], 1.0)
    x2 = b[:, 2] / r22
    x1 = (b[:, 1] - a[:, 1, 2] * x2) / r11
    x0 = (b[:, 0] - a[:, 0, 1] * x1 - a[:, 0, 2] * x2) / r00
    x = np.stack([x0, x1, x2], axis=-1)
    x[~ok] = 0.0
    return x, ok


def _estimate_from_rows(cos_eq, sin_eq, intensity_eq, weight_eq=None):
    """Chunked per-pixel LLS from per-equation trig/intensity stacks.

    All inputs are (N, B): one row per equation over the flattened pixels,
    holding cos/sin of twice the effective angle. Weights of 0 drop the
    equation. Returns (values (B, 3), ok (B,), dropped_any (B,)).
    """
    n, bsz = cos_eq.shape
    out = np.empty((bsz, 3))
    ok = np.empty(bsz, dtype=bool)
    dropped = np.zeros(bsz, dtype=bool)
    for start in range(0, bsz, _CHUNK):
        end = min(start + _CHUNK, bsz)
        a = np.empty((end - start, n, 3))
        b = np.empty((end - start, n))
        for i in range(n):
            a[:, i, 0] = 0.5
            a[:, i, 1] = 0.5 * cos_eq[i, start:end]
            a[:, i, 2] = 0.5 * sin_eq[i, start:end]
            b[:, i] = intensity_eq[i, start:end]
        if weight_eq is not None:
            for i in range(n):
                w = weight_eq[i, start:end]
                a[:, i, :] *= w[:, None]
                b[:, i] *= w
                dropped[start:end] |= w == 0
        out[start:end], ok[start:end] = _solve_stacked_lls(a, b)
    return out, ok, dropped


def _status_from(ok, dropped):
    status = np.zeros(ok.shape, dtype=np.uint8)
    status[~ok] = STATUS_RANK_DEFICIENT
    status[~ok & dropped] = STATUS_SATURATED
    return status


def _match_angles(capture_angles, eff):
    """Map each capture angle to its channel in the effective-angle field."""
    idx = []
    nominal = np.mod(np.asarray(eff.nominal, dtype=float), np.pi)
    for a in capture_angles:
        d = np.abs(np.mod(a, np.pi) - nominal)
        d = np.minimum(d, np.pi - d)
        j = int(np.argmin(d))
        if d[j] > 1e-9:
            raise ValueError(
                f"capture angle {a!r} not present in the effective-angle field")
        idx.append(j)
    return idx


def estimate_stokes_multishot(capture, eff):
    """Per-pixel Stokes from a multishot capture using effective angles.

    The solution lives in each pixel's local ray frame. Rank-deficient
    pixels are zeroed and recorded in the status mask instead of failing
    globally; saturated intensities (>= capture.saturation) are dropped
    from the per-pixel system first.
    """
    if not isinstance(capture, MultishotCapture):
        raise TypeError("estimate_stokes_multishot expects a MultishotCapture")
    h, w = capture.shape
    if eff.shape != (h, w):
        raise ValueError(f"effective-angle field {eff.shape} does not match "
                         f"capture {capture.shape}")
    chan = _match_angles(capture.angles, eff)
    n = len(chan)
    cos2, sin2 = eff.trig()
    cos_eq = cos2[chan].reshape(n, h * w)
    sin_eq = sin2[chan].reshape(n, h * w)
    b_eq = capture.images.reshape(n, h * w)
    weights = None
    if capture.saturation is not None:
        weights = (b_eq < capture.saturation).astype(float)
    values, ok, dropped = _estimate_from_rows(cos_eq, sin_eq, b_eq, weights)
    return StokesMap(values=values.reshape(h, w, 3), frame=FRAME_LOCAL,
                     status=_status_from(ok, dropped).reshape(h, w),
                     intrinsics=eff.intrinsics)


def _window_starts(size, h):
    """Window origin per pixel: centered, shifted to stay inside the image."""
    lead = (h - 1) // 2
    return np.clip(np.arange(size) - lead, 0, size - h)


def estimate_stokes_dofp(capture, eff, window=2, eff_angle_at_center=False):
    """Demosaic a DoFP mosaic by per-pixel least squares over an HxH window.

    Each pixel j gathers its HxH neighborhood; every neighbor contributes
    one equation built from the neighbor's own nominal mosaic angle and,
    by default, the effective angle of the *neighbor's* ray (each photosite
    has its own ray). ``eff_angle_at_center=True`` evaluates effective
    angles at j's ray instead. Windows near the border shift inward so that
    every pixel still sees H*H distinct photosites.
    """
    if not isinstance(capture, MosaicCapture):
        raise TypeError("estimate_stokes_dofp expects a MosaicCapture")
    if window < 2:
        raise ValueError("window must be >= 2")
    h, w = capture.shape
    if window > h or window > w:
        raise ValueError("window exceeds image size")
    if eff.shape != (h, w):
        raise ValueError(f"effective-angle field {eff.shape} does not match "
                         f"capture {capture.shape}")
    layout = capture.layout
    if _circular_distinct(layout.angles) < 3:
        raise LayoutMismatch("mosaic layout needs >= 3 distinct angles")
    # Any HxH window of the periodic 2x2 pattern covers the same angle
    # multiset per window parity; reject layouts whose windows are too poor.
    pat_idx = layout.index_image(window + 1, window + 1)
    for r0 in range(2):
        for c0 in range(2):
            block = pat_idx[r0:r0 + window, c0:c0 + window]
            got = _circular_distinct([layout.angles[i] for i in block.ravel()])
            if got < 3:
                raise LayoutMismatch(
                    f"{window}x{window} windows cover only {got} distinct angles")

    chan = _match_angles(layout.angles, eff)
    idx_img = layout.index_image(h, w)
    cos2, sin2 = eff.trig()
    cos_chan = cos2[list(chan)]
    sin_chan = sin2[list(chan)]
    # Trig of each pixel's own mosaic channel.
    own_cos = np.take_along_axis(cos_chan, idx_img[None], axis=0)[0]
    own_sin = np.take_along_axis(sin_chan, idx_img[None], axis=0)[0]

    row0 = _window_starts(h, window)
    col0 = _window_starts(w, window)
    n_eq = window * window
    cos_eq = np.empty((n_eq, h, w))
    sin_eq = np.empty((n_eq, h, w))
    b_eq = np.empty((n_eq, h, w))
    k = 0
    for dr in range(window):
        rr = row0 + dr
        for dc in range(window):
            cc = col0 + dc
            b_eq[k] = capture.image[np.ix_(rr, cc)]
            if eff_angle_at_center:
                # Neighbor's nominal channel, effective angle at j's own ray.
                nb_idx = idx_img[np.ix_(rr, cc)][None]
                cos_eq[k] = np.take_along_axis(cos_chan, nb_idx, axis=0)[0]
                sin_eq[k] = np.take_along_axis(sin_chan, nb_idx, axis=0)[0]
            else:
                cos_eq[k] = own_cos[np.ix_(rr, cc)]
                sin_eq[k] = own_sin[np.ix_(rr, cc)]
            k += 1

    flat = (n_eq, h * w)
    weights = None
    if capture.saturation is not None:
        weights = (b_eq < capture.saturation).astype(float).reshape(flat)
    values, ok, dropped = _estimate_from_rows(
        cos_eq.reshape(flat), sin_eq.reshape(flat), b_eq.reshape(flat), weights)
    return StokesMap(values=values.reshape(h, w, 3), frame=FRAME_LOCAL,
                     status=_status_from(ok, dropped).reshape(h, w),
                     intrinsics=eff.intrinsics)


def estimate_stokes_orthographic(capture, window=2):
    """Baseline estimator: nominal angles, identity frames everywhere.

    Identical solve pipeline with the effective angles replaced by the
    nominal ones; the result is expressed in the camera frame.
    """
    h, w = capture.shape
    if isinstance(capture, MultishotCapture):
        eff = EffectiveAngleField.nominal_everywhere(capture.angles, w, h)
        out = estimate_stokes_multishot(capture, eff)
    elif isinstance(capture, MosaicCapture):
        eff = EffectiveAngleField.nominal_everywhere(capture.layout.angles, w, h)
        out = estimate_stokes_dofp(capture, eff, window=window)
    else:
        raise TypeError(f"unsupported capture type {type(capture).__name__}")
    out.frame = FRAME_CAMERA
    return out


def closed_form_pfa(i0, i45, i90, i135):
    """Closed-form Stokes for the four-angle PFA special case.

    s0 = i0 + i90, s1 = i0 - i90, s2 = i45 - i135, s3 = 0. Valid only under
    the orthographic assumption; consistent inputs also satisfy
    i0 + i90 = i45 + i135.
    """
    i0, i45, i90, i135 = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (i0, i45, i90, i135)))
    return np.stack([i0 + i90, i0 - i90, i45 - i135, np.zeros_like(i0)],
                    axis=-1)


DEFAULT_GAMMAS = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)


def synthesize_ideal_images(smap, gammas=DEFAULT_GAMMAS):
    """Images seen through ideal untilted polarizers at the given angles.

    Each output pixel is the first Mueller row at gamma applied to the
    pixel's Stokes vector, so the orthogonal-pair constraint
    I(g) + I(g + pi/2) = s0 holds exactly up to floating point.
    """
    if smap.frame != FRAME_LOCAL:
        raise FrameMismatch("synthesis needs a local-frame Stokes map")
    s = smap.values
    out = np.empty((len(gammas),) + smap.shape)
    for i, g in enumerate(gammas):
        out[i] = 0.5 * (s[..., 0] + s[..., 1] * np.cos(2.0 * g)
                        + s[..., 2] * np.sin(2.0 * g))
    return out
