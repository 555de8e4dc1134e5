"""Command-line front end: one subcommand per pipeline stage.

Subcommands: frames, estimate, synthesize, normals, plane, simulate,
evaluate. Exit codes: 0 success, 2 configuration/schema error, 3
numeric/compute error, 4 degenerate geometry. All failures print a single
``ErrorClass: message`` line to stderr.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import config, io, sfp, sim, stokes as st
from .errors import (GeometryError, PolarprojError, SchemaError,
                     UnsupportedFormat, CorruptFile)
from .rayframes import (RayFrameField, build_effective_angles,
                        build_frame_field)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3
EXIT_GEOMETRY = 4

PIPELINES = ("projective", "ortho")


class _CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _conflict(flag_a, name_a, flag_b, name_b):
    if flag_a and flag_b:
        raise _CliError(EXIT_CONFIG,
                        f"flags {name_a} and {name_b} are incompatible")


def _parse_angles(text):
    try:
        return tuple(np.deg2rad(float(x)) for x in text.split(","))
    except ValueError:
        raise _CliError(EXIT_CONFIG, f"bad angle list {text!r}") from None


def _load_frames(args, k):
    if args.pipeline == "ortho":
        return RayFrameField.orthographic(k.width, k.height)
    return build_frame_field(k)


def _intrinsics(args):
    k = io.read_intrinsics(args.intrinsics)
    if args.pixel_offset is not None and args.pixel_offset != k.pixel_offset:
        from dataclasses import replace
        k = replace(k, pixel_offset=args.pixel_offset)
    return k


def _load_capture(manifest):
    if manifest["kind"] == "multishot":
        images = np.stack([io.read_raw_image(p)[0] for p in manifest["paths"]])
        return st.MultishotCapture(images=images, angles=manifest["angles"],
                                   saturation=manifest["saturation"])
    image, _ = io.read_raw_image(manifest["path"])
    return st.MosaicCapture(image=image, layout=manifest["layout"],
                            saturation=manifest["saturation"])


def _stokes_ext(args):
    return ".pfm" if getattr(args, "pfm", False) else ".npy"


def _load_smap(path, frame, k=None):
    """Load a Stokes map plus its sibling ``*_mask.png`` status, if present."""
    values = io.load_map(path)
    status = None
    mask_path = os.path.splitext(path)[0] + "_mask.png"
    if os.path.exists(mask_path):
        status = io.read_mask_png(mask_path)
    return st.StokesMap(values=values, frame=frame, status=status, intrinsics=k)


# --- subcommands ---------------------------------------------------------------


def cmd_frames(args):
    if not args.out and not args.probe:
        raise _CliError(EXIT_CONFIG, "frames needs --out and/or --probe")
    k = _intrinsics(args)
    field = build_frame_field(k)
    angles = _parse_angles(args.angles)
    eff = build_effective_angles(field, angles)
    if args.probe:
        try:
            u, v = (float(x) for x in args.probe.split(","))
        except ValueError:
            raise _CliError(EXIT_CONFIG, f"bad --probe {args.probe!r}") from None
        from .rayframes import backproject, local_frame, effective_angle
        frame = local_frame(backproject(k, u, v))
        for a in angles:
            print(f"pixel ({u}, {v}): alpha {np.rad2deg(a):7.3f} deg -> "
                  f"effective {np.rad2deg(effective_angle(frame, a)):.6f} deg")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ext = _stokes_ext(args)
        for axis, name in ((0, "rx"), (1, "ry"), (2, "rz")):
            io.save_map(os.path.join(args.out, f"frames_{name}{ext}"),
                        field.rotation[..., :, axis])
        for a, vals in zip(eff.nominal, eff.values):
            deg = int(round(np.rad2deg(a))) % 180
            io.save_map(os.path.join(args.out, f"eff_{deg:03d}{ext}"), vals)
        print(f"wrote frame axes and {len(angles)} effective-angle maps "
              f"to {args.out}")
    return EXIT_OK


def cmd_estimate(args):
    _conflict(args.pipeline == "ortho", "--pipeline ortho",
              args.eff_angle_at_center, "--eff-angle-at-center")
    k = _intrinsics(args)
    manifest = io.read_manifest(args.manifest)
    _conflict(manifest["kind"] == "multishot", "a multishot --manifest",
              args.window != 2, "--window")
    capture = _load_capture(manifest)
    if capture.shape != (k.height, k.width):
        raise _CliError(EXIT_CONFIG,
                        f"capture {capture.shape} does not match intrinsics "
                        f"{(k.height, k.width)}")
    if args.gamma != 1.0:
        degamma = lambda im: np.power(im, args.gamma)
        if isinstance(capture, st.MultishotCapture):
            capture = st.MultishotCapture(degamma(capture.images),
                                          capture.angles, capture.saturation)
        else:
            capture = st.MosaicCapture(degamma(capture.image), capture.layout,
                                       capture.saturation)
    if args.saturation is not None:
        from dataclasses import replace
        capture = replace(capture, saturation=args.saturation)

    if args.pipeline == "ortho":
        smap = st.estimate_stokes_orthographic(capture, window=args.window)
    else:
        frames = build_frame_field(k)
        if isinstance(capture, st.MultishotCapture):
            eff = build_effective_angles(frames, capture.angles)
            smap = st.estimate_stokes_multishot(capture, eff)
        else:
            eff = build_effective_angles(frames, capture.layout.angles)
            smap = st.estimate_stokes_dofp(
                capture, eff, window=args.window,
                eff_angle_at_center=args.eff_angle_at_center)

    io.save_map(args.out, smap.values)
    io.write_mask_png(os.path.splitext(args.out)[0] + "_mask.png", smap.status)
    flagged = int(np.count_nonzero(smap.status))
    print(f"estimated {smap.shape[1]}x{smap.shape[0]} Stokes map "
          f"({args.pipeline}), {flagged} flagged pixels")
    return EXIT_OK


def cmd_synthesize(args):
    smap = _load_smap(args.stokes, st.FRAME_LOCAL)
    images = st.synthesize_ideal_images(smap)
    os.makedirs(args.out, exist_ok=True)
    scale = float(images.max()) or 1.0
    meta = {"scale": scale, "gammas_deg": [0, 45, 90, 135]}
    for g, img in zip((0, 45, 90, 135), images):
        io.write_png16(os.path.join(args.out, f"ideal_{g:03d}.png"), img,
                       maxval=scale)
        if args.pfm:
            io.write_pfm(os.path.join(args.out, f"ideal_{g:03d}.pfm"), img)
    with open(os.path.join(args.out, "synthesize_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    worst = float(np.abs(images[0] + images[2] - images[1] - images[3]).max())
    print(f"wrote 4 ideal-polarizer images to {args.out} "
          f"(pair-sum violation {worst:.3g})")
    return EXIT_OK


def cmd_normals(args):
    k = _intrinsics(args)
    smap = _load_smap(args.stokes, st.FRAME_LOCAL, k)
    model = sfp.SpecularDolpModel(n=args.n, a=args.scale)
    cands = sfp.normals_local(smap, model, mode=args.mode)
    frames = build_frame_field(k)
    cands = sfp.rotate_normals_to_camera(cands, frames)
    if args.oracle:
        gt = sfp.NormalField(normals=io.load_map(args.oracle),
                             mask=cands.mask, frame=st.FRAME_CAMERA)
        out = sfp.oracle_disambiguate(cands, gt)
    else:
        # No oracle: keep the stated branch and the raw AoLP azimuth.
        branch_i = 0 if args.branch == "low" else 1
        field = cands.candidate(branch_i)
        out = sfp.NormalField(normals=np.where(cands.mask[..., None], field, 0.0),
                              mask=cands.mask, frame=st.FRAME_CAMERA)
    io.save_map(args.out, out.normals)
    io.write_mask_png(os.path.splitext(args.out)[0] + "_mask.png",
                      (~out.mask).astype(np.uint8))
    print(f"wrote normal field ({int(out.mask.sum())} valid pixels)")
    return EXIT_OK


def cmd_plane(args):
    k = _intrinsics(args)
    frame = st.FRAME_CAMERA if args.pipeline == "ortho" else st.FRAME_LOCAL
    smap = _load_smap(args.stokes, frame, k)
    aolp, _, mask = sfp.polarization_maps(smap)
    frames = _load_frames(args, k)
    est = sfp.estimate_plane_normal(aolp, frames, mask)
    report = {"normal": est.normal.tolist(), "residual": est.residual,
              "count": est.count}
    if args.out:
        io.write_report(args.out, report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_simulate(args):
    k = _intrinsics(args)
    scene, noise = io.read_scene(args.scene)
    if args.sigma is not None or args.bits is not None or args.seed is not None:
        noise = sim.NoiseSpec(
            gaussian_sigma=args.sigma if args.sigma is not None else
            (noise.gaussian_sigma if noise else 0.0),
            quantization_bits=args.bits if args.bits is not None else
            (noise.quantization_bits if noise else 0),
            seed=args.seed if args.seed is not None else
            (noise.seed if noise else 0))
    _conflict(args.sensor == "mosaic", "--sensor mosaic",
              args.sensor_angles != "0,45,90,135", "--sensor-angles")
    sensor = st.MosaicLayout() if args.sensor == "mosaic" else \
        _parse_angles(args.sensor_angles)
    capture, gt = sim.simulate_capture(scene, k, sensor, noise,
                                       angle_model=args.pipeline)
    os.makedirs(args.out, exist_ok=True)
    ext = _stokes_ext(args)
    manifest = {"kind": "mosaic" if isinstance(capture, st.MosaicCapture)
                else "multishot", "saturation": None}
    if isinstance(capture, st.MosaicCapture):
        io.save_map(os.path.join(args.out, f"mosaic{ext}"), capture.image)
        manifest["image"] = f"mosaic{ext}"
        manifest["layout"] = {
            "pattern_deg": np.rad2deg(capture.layout.pattern).tolist(),
            "parity": list(capture.layout.parity)}
    else:
        entries = []
        for i, (a, img) in enumerate(zip(capture.angles, capture.images)):
            name = f"shot_{i:03d}{ext}"
            io.save_map(os.path.join(args.out, name), img)
            entries.append({"path": name, "angle_deg": float(np.rad2deg(a))})
        manifest["images"] = entries
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    io.save_map(os.path.join(args.out, f"gt_stokes{ext}"), gt.stokes)
    io.save_map(os.path.join(args.out, f"gt_aolp{ext}"), gt.aolp)
    io.save_map(os.path.join(args.out, f"gt_dolp{ext}"), gt.dolp)
    if gt.normals is not None:
        io.save_map(os.path.join(args.out, f"gt_normals{ext}"),
                    np.ascontiguousarray(gt.normals))
    io.write_mask_png(os.path.join(args.out, "gt_mask.png"),
                      (~gt.mask).astype(np.uint8))
    meta = {"scene": args.scene, "s0_base": scene.s0_base,
            "normal": list(scene.normal) if scene.kind == "plane" else None,
            "mode": scene.mode}
    with open(os.path.join(args.out, "gt_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"simulated {manifest['kind']} capture into {args.out}")
    return EXIT_OK


def _radial_profile(err, k, mask):
    """Mean error over the central 10% disk and the outer 10% annulus."""
    h, w = err.shape
    vv, uu = np.mgrid[0:h, 0:w]
    r = np.hypot((uu - k.cx) / k.width, (vv - k.cy) / k.height)
    rmax = r[mask].max()
    inner = mask & (r <= 0.1 * rmax)
    outer = mask & (r >= 0.9 * rmax)
    return float(err[inner].mean()), float(err[outer].mean())


def cmd_evaluate(args):
    k = _intrinsics(args)
    frame = st.FRAME_CAMERA if args.pipeline == "ortho" else st.FRAME_LOCAL
    smap = _load_smap(args.stokes, frame, k)
    aolp_est, dolp_est, mask = sfp.polarization_maps(smap)

    gt_dir = args.gt
    gt_aolp = io.load_map(_find_map(gt_dir, "gt_aolp"))
    gt_dolp = io.load_map(_find_map(gt_dir, "gt_dolp"))
    mask &= gt_dolp >= sfp.UNPOLARIZED_DOLP

    if args.pipeline == "ortho":
        # The orthographic model predicts the constant camera-frame azimuth.
        with open(os.path.join(gt_dir, "gt_meta.json")) as fh:
            meta = json.load(fh)
        n = np.asarray(meta["normal"], dtype=float)
        phi = np.arctan2(n[1], n[0])
        if meta.get("mode") == "diffuse":
            phi += np.pi / 2
        expected_aolp = np.full(aolp_est.shape, np.mod(phi, np.pi))
    else:
        expected_aolp = gt_aolp

    aolp_stats = sfp.angular_error_stats(aolp_est, expected_aolp, "pi",
                                         mask, kind="angle").degrees()
    dolp_err = np.abs(dolp_est - gt_dolp)[mask]
    report = {
        "pipeline": args.pipeline,
        "count": int(mask.sum()),
        "aolp": {"mae_deg": aolp_stats.mae, "rmse_deg": aolp_stats.rmse,
                 "std_deg": aolp_stats.std},
        "dolp": {"mae": float(dolp_err.mean()),
                 "rmse": float(np.sqrt(np.mean(dolp_err ** 2)))},
    }

    err_map = sfp.angular_errors(aolp_est, expected_aolp, "pi", kind="angle")
    err_map = np.where(mask, err_map, 0.0)
    inner, outer = _radial_profile(np.degrees(err_map), k, mask)
    report["radial"] = {"central_disk_mean_deg": inner,
                        "outer_annulus_mean_deg": outer}

    if args.normals:
        est_n = io.load_map(args.normals)
        gt_n = io.load_map(_find_map(args.gt, "gt_normals"))
        nstats = sfp.angular_error_stats(est_n, gt_n, "none", mask,
                                         kind="normal").degrees()
        report["normals"] = {"mae_deg": nstats.mae, "rmse_deg": nstats.rmse,
                             "std_deg": nstats.std}
    if args.heatmap:
        io.save_map(args.heatmap, np.degrees(err_map))
    if args.out:
        io.write_report(args.out, report)
    print(json.dumps(report))
    return EXIT_OK


def _find_map(directory, stem):
    for ext in (".npy", ".pfm"):
        p = os.path.join(directory, stem + ext)
        if os.path.exists(p):
            return p
    raise _CliError(EXIT_CONFIG, f"no {stem}.npy/.pfm under {directory}")


# --- parser ----------------------------------------------------------------------


def _add_common(p, intrinsics=True):
    if intrinsics:
        p.add_argument("--intrinsics", required=True,
                       help="intrinsics JSON document")
    p.add_argument("--pixel-offset", type=float, choices=(0.0, 0.5),
                   default=None, dest="pixel_offset",
                   help="pixel-center convention override")
    p.add_argument("--strict", action="store_true",
                   help="treat physical-consistency violations as errors")
    p.add_argument("--threads", type=int, default=1,
                   help="parallel width cap (1 = bit-reproducible reductions)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="polarproj",
        description="Projective polarization imaging pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("frames", help="per-pixel frames and effective angles")
    _add_common(p)
    p.add_argument("--out", help="output directory for PFM/npy maps")
    p.add_argument("--angles", default="0,45,90,135",
                   help="nominal polarizer angles, degrees, comma-separated")
    p.add_argument("--probe", metavar="U,V",
                   help="print effective angles at one pixel")
    p.add_argument("--pfm", action="store_true", help="write PFM instead of npy")
    p.set_defaults(func=cmd_frames)

    p = sub.add_parser("estimate", help="per-pixel Stokes from a capture")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="capture manifest JSON")
    p.add_argument("--out", required=True, help="output Stokes map (.npy/.pfm)")
    p.add_argument("--pipeline", choices=PIPELINES, default="projective")
    p.add_argument("--window", type=int, default=2, metavar="H",
                   help="DoFP demosaic window size")
    p.add_argument("--eff-angle-at-center", action="store_true",
                   dest="eff_angle_at_center",
                   help="evaluate effective angles at the window center ray")
    p.add_argument("--saturation", type=float, default=None,
                   help="sensor maximum; saturated samples are dropped")
    p.add_argument("--gamma", type=float, default=1.0,
                   help="de-gamma exponent applied to raw intensities")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synthesize", help="ideal-polarizer images from Stokes")
    _add_common(p, intrinsics=False)
    p.add_argument("--stokes", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pfm", action="store_true",
                   help="also write exact PFM copies")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("normals", help="normal field from a Stokes map")
    _add_common(p)
    p.add_argument("--stokes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=float, default=1.5, help="refractive index")
    p.add_argument("--scale", type=float, default=1.0,
                   help="DoLP model scale parameter")
    p.add_argument("--mode", choices=("specular", "diffuse"),
                   default="specular")
    p.add_argument("--branch", choices=("low", "high"), default="low",
                   help="zenith branch when no oracle is given")
    p.add_argument("--oracle", help="ground-truth normals for disambiguation")
    p.set_defaults(func=cmd_normals)

    p = sub.add_parser("plane", help="plane normal from AoLP constraints")
    _add_common(p)
    p.add_argument("--stokes", required=True)
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--pipeline", choices=PIPELINES, default="projective")
    p.set_defaults(func=cmd_plane)

    p = sub.add_parser("simulate", help="render a synthetic capture + GT")
    _add_common(p)
    p.add_argument("--scene", required=True, help="scene JSON document")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sensor", choices=("mosaic", "multishot"),
                   default="multishot")
    p.add_argument("--sensor-angles", default="0,45,90,135",
                   dest="sensor_angles",
                   help="multishot nominal angles, degrees")
    p.add_argument("--pipeline", choices=PIPELINES, default="projective",
                   help="angle model used for rendering")
    p.add_argument("--sigma", type=float, default=None,
                   help="Gaussian noise sigma, fraction of full scale")
    p.add_argument("--bits", type=int, default=None,
                   help="quantization bit depth (0 = off)")
    p.add_argument("--seed", type=int, default=None, help="noise seed")
    p.add_argument("--pfm", action="store_true", help="write PFM instead of npy")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="metrics report against ground truth")
    _add_common(p)
    p.add_argument("--stokes", required=True, help="estimated Stokes map")
    p.add_argument("--gt", required=True, help="simulation output directory")
    p.add_argument("--pipeline", choices=PIPELINES, default="projective")
    p.add_argument("--normals", help="estimated normal field to score")
    p.add_argument("--heatmap", help="write AoLP error heatmap (.npy/.pfm)")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.strict:
        config.set_strict(True)
    if args.threads < 1:
        print("_CliError: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, UnsupportedFormat, CorruptFile, FileNotFoundError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except PolarprojError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ValueError, TypeError, ArithmeticError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
