"""Readers and writers for raw images, float maps, and JSON documents.

Raw captures are 16-bit grayscale PNG or binary PGM (P5), scaled to [0, 1]
by their maxval on load. Float maps travel as PFM (the portable float map,
32-bit, bottom-to-top scanlines, scale sign encodes endianness) or as
``.npy`` when the full float64 precision of the oracle chain must survive
a round trip through disk. Readers never crash on arbitrary bytes: any
input yields a value or a typed error.

All JSON angle fields are degrees (human-facing); everything in memory is
radians.
"""

import json
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import config
from .errors import CorruptFile, SchemaError, UnsupportedFormat
from .rayframes import Intrinsics
from .stokes import MosaicLayout

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
NPY_MAGIC = b"\x93NUMPY"


# --- raw intensity images ----------------------------------------------------

def _read_pgm(fh):
    def token():
        # skip whitespace and '#' comments
        out = b""
        while True:
            c = fh.read(1)
            if not c:
                raise CorruptFile("unexpected end of PGM header")
            if c == b"#":
                while c not in (b"\n", b""):
                    c = fh.read(1)
            elif c.isspace():
                if out:
                    return out
            else:
                out += c

    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise CorruptFile(f"malformed PGM header: {exc}") from None
    if not (0 < maxval <= 65535) or width <= 0 or height <= 0:
        raise CorruptFile(f"invalid PGM dimensions {width}x{height}/{maxval}")
    two_byte = maxval > 255
    count = width * height
    payload = fh.read(count * (2 if two_byte else 1))
    if len(payload) != count * (2 if two_byte else 1):
        raise CorruptFile("truncated PGM payload")
    dtype = ">u2" if two_byte else "u1"  # PGM multi-byte samples are big-endian
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return data.astype(float) / maxval, {"format": "pgm", "maxval": maxval}


def read_raw_image(path):
    """Load a raw intensity image, scaled to [0, 1] by its maxval.

    Accepts 16-bit (or 8-bit) grayscale PNG, binary PGM (P5), 1-channel
    PFM, and float ``.npy`` arrays (the last two pass through unscaled).
    Returns ``(image, meta)``.
    """
    with open(path, "rb") as fh:
        head = fh.read(8)
        fh.seek(0)
        if head[:2] == b"P5":
            fh.read(2)
            return _read_pgm(fh)
        if head[:2] == b"P2":
            raise UnsupportedFormat("ASCII PGM (P2) is not supported, use P5")
        if head[:2] in (b"PF", b"Pf"):
            data = _read_pfm_stream(fh)
            if data.ndim != 2:
                raise UnsupportedFormat("raw images must be single-channel")
            return data.astype(float), {"format": "pfm", "maxval": None}
        if head[:6] == NPY_MAGIC:
            data = _load_npy(fh, path)
            if data.ndim != 2:
                raise UnsupportedFormat("raw images must be single-channel")
            return data.astype(float), {"format": "npy", "maxval": None}
        if head == PNG_MAGIC:
            return _read_png(fh, path)
    raise UnsupportedFormat(f"{path}: not a PGM/PNG/PFM/npy image")


def _read_png(fh, path):
    try:
        img = Image.open(fh)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptFile(f"{path}: broken PNG ({exc})") from None
    if img.mode in ("I;16", "I;16B", "I"):
        maxval = 65535
    elif img.mode == "L":
        maxval = 255
    else:
        raise UnsupportedFormat(f"{path}: PNG mode {img.mode}, need grayscale")
    data = np.asarray(img, dtype=float)
    if data.ndim != 2:
        raise UnsupportedFormat(f"{path}: PNG is not single-channel")
    return data / maxval, {"format": "png", "maxval": maxval}


def write_png16(path, image, maxval=None):
    """Write a [0, 1]-scaled image as 16-bit grayscale PNG.

    Returns the scale used, so callers can record it alongside.
    """
    image = np.asarray(image, dtype=float)
    scale = float(image.max()) if maxval is None else float(maxval)
    if scale <= 0:
        scale = 1.0
    quant = np.clip(np.round(image / scale * 65535.0), 0, 65535).astype("<u2")
    Image.fromarray(quant).save(path, format="PNG")
    return scale


def write_pgm(path, image, maxval=65535):
    """Write a [0, 1]-scaled image as binary PGM (P5), big-endian samples."""
    image = np.asarray(image, dtype=float)
    quant = np.clip(np.round(image * maxval), 0, maxval)
    data = quant.astype(">u2" if maxval > 255 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode())
        fh.write(data.tobytes())


def write_mask_png(path, status):
    Image.fromarray(np.asarray(status, dtype=np.uint8)).save(path, format="PNG")


def read_mask_png(path):
    img, meta = read_raw_image(path)
    return np.round(img * meta["maxval"]).astype(np.uint8)


# --- PFM ---------------------------------------------------------------------

def _read_pfm_stream(fh):
    def line():
        out = b""
        while True:
            c = fh.read(1)
            if not c:
                raise CorruptFile("unexpected end of PFM header")
            if c == b"\n":
                return out
            out += c

    tag = line()
    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise UnsupportedFormat(f"not a PFM stream (header {tag!r})")
    try:
        dims = line().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(line())
    except (ValueError, IndexError) as exc:
        raise CorruptFile(f"malformed PFM header: {exc}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise CorruptFile("invalid PFM dimensions or scale")
    count = width * height * channels
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise CorruptFile("truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    data = data[::-1]  # PFM scanlines run bottom-to-top
    return data[..., 0].copy() if channels == 1 else data.astype(np.float32)


def read_pfm(path):
    """Read a PFM float map as (H, W) or (H, W, 3) float32."""
    with open(path, "rb") as fh:
        return _read_pfm_stream(fh)


def write_pfm(path, data):
    """Write a float map as little-endian PFM; float64 input is narrowed."""
    data = np.asarray(data)
    if data.ndim == 2:
        tag, out = b"Pf", data[::-1].astype("<f4")
    elif data.ndim == 3 and data.shape[2] == 3:
        tag, out = b"PF", data[::-1].astype("<f4")
    else:
        raise UnsupportedFormat("PFM stores 1- or 3-channel maps only")
    if not np.all(np.isfinite(out)):
        raise ValueError("refusing to write non-finite samples")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(out.tobytes())


# --- float64-exact maps (.npy) -------------------------------------------------

def _load_npy(fh, path):
    try:
        data = np.load(fh, allow_pickle=False)
    except ValueError as exc:
        raise CorruptFile(f"{path}: broken npy ({exc})") from None
    if not np.issubdtype(data.dtype, np.floating):
        raise UnsupportedFormat(f"{path}: npy map must be floating point")
    return data


def save_map(path, data):
    """Write a float map, format chosen by extension (.npy or .pfm)."""
    path = str(path)
    if path.endswith(".npy"):
        np.save(path, np.asarray(data, dtype=float))
    elif path.endswith(".pfm"):
        write_pfm(path, data)
    else:
        raise UnsupportedFormat(f"{path}: use a .npy or .pfm extension")


def load_map(path):
    """Read a float map written by :func:`save_map`."""
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(6)
        fh.seek(0)
        if head[:6] == NPY_MAGIC:
            return _load_npy(fh, path).astype(float)
        if head[:2] in (b"PF", b"Pf"):
            return _read_pfm_stream(fh).astype(float)
    raise UnsupportedFormat(f"{path}: not a .npy or .pfm map")


# --- JSON documents ------------------------------------------------------------

def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from None


def _check_unknown(doc, known, where):
    unknown = set(doc) - set(known)
    if unknown and config.is_strict():
        raise SchemaError(f"{where}.{sorted(unknown)[0]}", "unknown field")


def _require(doc, name, types, where, default=KeyError):
    val = doc.get(name)
    if val is None:
        # absent, or an explicit null for an optional field
        if default is KeyError:
            raise SchemaError(f"{where}.{name}", "missing required field")
        return default
    if not isinstance(val, types) or isinstance(val, bool):
        raise SchemaError(f"{where}.{name}",
                          f"expected {types}, got {type(val).__name__}")
    return val


def read_intrinsics(path):
    """Load camera intrinsics from their JSON document."""
    doc = _load_json(path)
    where = "intrinsics"
    _check_unknown(doc, {"fx", "fy", "cx", "cy", "skew", "width", "height",
                         "pixel_offset"}, where)
    num = (int, float)
    fx = _require(doc, "fx", num, where)
    fy = _require(doc, "fy", num, where)
    if fx <= 0:
        raise SchemaError("intrinsics.fx", "must be > 0")
    if fy <= 0:
        raise SchemaError("intrinsics.fy", "must be > 0")
    width = _require(doc, "width", int, where)
    height = _require(doc, "height", int, where)
    if width <= 0 or height <= 0:
        raise SchemaError("intrinsics.width/height", "must be > 0")
    offset = _require(doc, "pixel_offset", num, where, default=0.0)
    if offset not in (0.0, 0.5):
        raise SchemaError("intrinsics.pixel_offset", "must be 0.0 or 0.5")
    return Intrinsics(fx=float(fx), fy=float(fy),
                      cx=float(_require(doc, "cx", num, where)),
                      cy=float(_require(doc, "cy", num, where)),
                      width=width, height=height,
                      skew=float(_require(doc, "skew", num, where, default=0.0)),
                      pixel_offset=float(offset))


def write_intrinsics(path, k):
    with open(path, "w") as fh:
        json.dump({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                   "skew": k.skew, "width": k.width, "height": k.height,
                   "pixel_offset": k.pixel_offset}, fh, indent=2)


def _layout_from_doc(doc, where):
    pattern = _require(doc, "pattern_deg", list, where,
                       default=[[90.0, 45.0], [135.0, 0.0]])
    parity = _require(doc, "parity", list, where, default=[0, 0])
    try:
        pat = np.deg2rad(np.asarray(pattern, dtype=float))
    except ValueError:
        raise SchemaError(f"{where}.pattern_deg", "must be a 2x2 number grid") from None
    if pat.shape != (2, 2):
        raise SchemaError(f"{where}.pattern_deg", "must be a 2x2 number grid")
    return MosaicLayout(pattern=tuple(map(tuple, pat)), parity=tuple(parity))


def read_manifest(path):
    """Load a capture manifest; returns a dict with domain objects.

    Multishot schema: {"kind": "multishot", "images": [{"path", "angle_deg"},
    ...], "saturation": null}. Mosaic schema: {"kind": "mosaic", "image":
    path, "layout": {"pattern_deg": [[...]], "parity": [0, 0]},
    "saturation": null}. Paths are resolved relative to the manifest.
    """
    doc = _load_json(path)
    base = os.path.dirname(os.path.abspath(str(path)))
    kind = _require(doc, "kind", str, "manifest")
    sat = _require(doc, "saturation", (int, float), "manifest", default=None)
    _check_unknown(doc, {"kind", "images", "image", "layout", "saturation",
                         "intrinsics"}, "manifest")

    def resolve(p):
        p = os.path.join(base, p) if not os.path.isabs(p) else p
        if not os.path.exists(p):
            raise SchemaError("manifest.images", f"referenced file missing: {p}")
        return p

    out = {"kind": kind, "saturation": sat}
    if "intrinsics" in doc:
        out["intrinsics"] = resolve(_require(doc, "intrinsics", str, "manifest"))
    if kind == "multishot":
        entries = _require(doc, "images", list, "manifest")
        if len(entries) < 3:
            raise SchemaError("manifest.images", "need >= 3 shots")
        paths, angles = [], []
        for i, e in enumerate(entries):
            if not isinstance(e, dict):
                raise SchemaError(f"manifest.images[{i}]", "expected an object")
            paths.append(resolve(_require(e, "path", str, f"manifest.images[{i}]")))
            angles.append(np.deg2rad(_require(e, "angle_deg", (int, float),
                                              f"manifest.images[{i}]")))
        folded = np.sort(np.mod(angles, np.pi))
        distinct = 1 + int(np.count_nonzero(np.diff(folded) > 1e-9))
        if distinct < 3:
            raise SchemaError("manifest.images",
                              "need >= 3 distinct angles modulo 180 deg")
        out["paths"] = paths
        out["angles"] = tuple(float(a) for a in angles)
    elif kind == "mosaic":
        out["path"] = resolve(_require(doc, "image", str, "manifest"))
        out["layout"] = _layout_from_doc(doc.get("layout") or {},
                                         "manifest.layout")
    else:
        raise SchemaError("manifest.kind", f"unknown capture kind {kind!r}")
    return out


def read_scene(path):
    """Load a SceneSpec (and optional NoiseSpec) from JSON."""
    from .sfp import SpecularDolpModel
    from .sim import NoiseSpec, SceneSpec

    doc = _load_json(path)
    where = "scene"
    _check_unknown(doc, {"kind", "normal", "distance", "mode", "model",
                         "s0_base", "stokes", "noise"}, where)
    kind = _require(doc, "kind", str, where, default="plane")
    noise = None
    if "noise" in doc:
        nd = _require(doc, "noise", dict, where)
        noise = NoiseSpec(
            gaussian_sigma=float(_require(nd, "gaussian_sigma", (int, float),
                                          "scene.noise", default=0.0)),
            quantization_bits=int(_require(nd, "quantization_bits", int,
                                           "scene.noise", default=0)),
            seed=int(_require(nd, "seed", int, "scene.noise", default=0)))
    try:
        if kind == "uniform":
            scene = SceneSpec.uniform(_require(doc, "stokes", list, where))
        else:
            md = _require(doc, "model", dict, where, default={})
            model = SpecularDolpModel(
                n=float(_require(md, "n", (int, float), "scene.model", default=1.5)),
                a=float(_require(md, "a", (int, float), "scene.model", default=1.0)))
            scene = SceneSpec.plane(
                normal=_require(doc, "normal", list, where),
                distance=float(_require(doc, "distance", (int, float), where,
                                        default=1.0)),
                mode=_require(doc, "mode", str, where, default="specular"),
                model=model,
                s0_base=float(_require(doc, "s0_base", (int, float), where,
                                       default=1.0)))
    except (ValueError, TypeError) as exc:
        raise SchemaError(where, str(exc)) from None
    return scene, noise


def write_report(path, report):
    """Write a metrics/plane JSON report."""
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"cannot serialize {type(o).__name__}")

    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=default)
        fh.write("\n")
