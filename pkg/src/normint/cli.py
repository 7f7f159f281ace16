"""Command-line interface.

Subcommands: integrate, mesh-only, synth, sweep-threshold, sweep-noise,
sweep-resolution.  Exit codes: 0 success, 1 I/O failure, 2 invalid
configuration, 3 numerical failure.  NORMINT_THREADS caps internal
parallelism (numba / BLAS threads).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .camera import Camera
from .normalmap import Plane, Ridge, Sinusoid, SphereCap
from .remesh import RemeshConfig

log = logging.getLogger("normint")


def _apply_thread_cap():
    cap = os.environ.get("NORMINT_THREADS")
    if not cap:
        return
    try:
        n = max(int(cap), 1)
    except ValueError:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import numba

        numba.set_num_threads(min(n, numba.get_num_threads()))
    except Exception:  # noqa: BLE001 - thread capping is best effort
        pass


def _add_camera_args(p):
    p.add_argument("--camera", choices=("ortho", "persp"), default="ortho")
    p.add_argument("--fx", type=float)
    p.add_argument("--fy", type=float)
    p.add_argument("--cx", type=float)
    p.add_argument("--cy", type=float)


def _camera_from_args(parser, args) -> Camera:
    if args.camera == "ortho":
        return Camera.orthographic()
    missing = [k for k in ("fx", "fy", "cx", "cy") if getattr(args, k) is None]
    if missing:
        parser.error(f"perspective camera needs --{' --'.join(missing)}")
    return Camera.perspective(args.fx, args.fy, args.cx, args.cy)


def _add_remesh_args(p):
    p.add_argument("--threshold", type=float,
                   help="collapse-cost threshold (exclusive with --vertices)")
    p.add_argument("--vertices", type=int,
                   help="vertex target (exclusive with --threshold)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--no-edge-alignment", action="store_true")
    p.add_argument("--no-vertex-alignment", action="store_true")


def _remesh_from_args(parser, args) -> RemeshConfig:
    if (args.threshold is None) == (args.vertices is None):
        parser.error("pass exactly one of --threshold or --vertices")
    kw = dict(lam=args.lam, alpha=args.alpha, iterations=args.iterations,
              enable_edge_alignment=not args.no_edge_alignment,
              enable_vertex_alignment=not args.no_vertex_alignment)
    try:
        if args.threshold is not None:
            return RemeshConfig.with_threshold(args.threshold, **kw)
        return RemeshConfig.with_vertex_target(args.vertices, **kw)
    except ValueError as exc:
        parser.error(str(exc))


def _scene_descriptor(parser, args, size):
    if args.scene == "plane":
        return Plane(a=args.slope, b=0.0, c=1.0 if args.camera == "persp" else 0.0)
    if args.scene == "sphere":
        return SphereCap(size / 2.0, size / 2.0, 0.45 * size,
                         depth=0.5 * size, cap_angle_deg=60.0)
    if args.scene == "sinusoid":
        return Sinusoid(amp=0.05 * size, freq=3.0)
    if args.scene == "ridge":
        return Ridge(slope=args.slope, angle_deg=20.0)
    parser.error(f"unknown scene {args.scene}")


def _add_scene_args(p):
    p.add_argument("--scene", choices=("plane", "sphere", "sinusoid", "ridge"),
                   default="sphere")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--slope", type=float, default=0.3,
                   help="slope for the plane / ridge scenes")


def _parse_list(parser, text, cast):
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        parser.error("empty sweep list")
    try:
        return [cast(s) for s in items]
    except ValueError:
        parser.error(f"bad sweep list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normint",
        description="Anisotropic screen-space meshing and normal integration")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="full pipeline: normals -> OBJ surface")
    p.add_argument("--input", required=True)
    p.add_argument("--mask")
    p.add_argument("--encoding", choices=("u8", "u16", "f32"), default="f32")
    _add_camera_args(p)
    _add_remesh_args(p)
    p.add_argument("--output", default="surface.obj")
    p.add_argument("--gt", help="ground-truth .npz for an evaluation report")
    p.add_argument("--report", help="evaluation report JSON path")
    p.add_argument("--depth-csv")
    p.add_argument("--svg", help="2D wireframe SVG path")
    p.add_argument("--mesh-obj-2d", help="2D mesh OBJ (z=0) path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("mesh-only", help="stop after meshing, dump 2D mesh")
    p.add_argument("--input", required=True)
    p.add_argument("--mask")
    p.add_argument("--encoding", choices=("u8", "u16", "f32"), default="f32")
    _add_camera_args(p)
    _add_remesh_args(p)
    p.add_argument("--svg")
    p.add_argument("--mesh-obj-2d", default="mesh2d.obj")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="emit a synthetic normal map + ground truth")
    _add_scene_args(p)
    _add_camera_args(p)
    p.add_argument("--encoding", choices=("u8", "u16", "f32"), default="f32")
    p.add_argument("--noise", type=float, default=0.0,
                   help="normal perturbation (degrees)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="normals.npy")
    p.add_argument("--mask-out", default="mask.png")
    p.add_argument("--gt-out", default="gt.npz")

    for kind, flag, cast in (("sweep-threshold", "--thresholds", float),
                             ("sweep-noise", "--sigmas", float),
                             ("sweep-resolution", "--resolutions", int)):
        p = sub.add_parser(kind, help=f"{kind.replace('-', ' ')} experiment")
        _add_scene_args(p)
        _add_camera_args(p)
        p.add_argument(flag, required=True,
                       help="comma-separated sweep values")
        p.add_argument("--vertices", type=int, default=2000)
        p.add_argument("--fraction", type=float, default=0.05,
                       help="vertex fraction for resolution sweeps")
        p.add_argument("--lambda", dest="lam", type=float, default=1e-5)
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--iterations", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--outdir", default="sweep_out")
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("normint").setLevel(
        logging.INFO if args.verbose == 0 else logging.DEBUG)

    if args.command in ("integrate", "mesh-only"):
        return _cmd_pipeline(parser, args)
    if args.command == "synth":
        return _cmd_synth(parser, args)
    return _cmd_sweep(parser, args)


def _cmd_pipeline(parser, args) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    cam = _camera_from_args(parser, args)
    rcfg = _remesh_from_args(parser, args)
    mesh_only = args.command == "mesh-only"
    cfg = PipelineConfig(
        input_path=args.input,
        mask_path=args.mask,
        encoding=args.encoding,
        camera=cam,
        remesh=rcfg,
        output_obj=None if mesh_only else args.output,
        output_report=None if mesh_only else args.report,
        output_depth_csv=None if mesh_only else args.depth_csv,
        output_svg=args.svg,
        output_mesh2d=args.mesh_obj_2d,
        gt_path=None if mesh_only else args.gt,
        seed=args.seed,
        solver_tol=1e-8 if mesh_only else args.tol,
        mesh_only=mesh_only)
    if not os.path.exists(args.input):
        log.error("input file not found: %s", args.input)
        return 1
    if args.mask and not os.path.exists(args.mask):
        log.error("mask file not found: %s", args.mask)
        return 1
    return run_pipeline(cfg)


def _cmd_synth(parser, args) -> int:
    import numpy as np

    from .normalmap import add_noise, encode, synthesize
    from .pipeline import save_ground_truth

    cam = _camera_from_args(parser, args)
    desc = _scene_descriptor(parser, args, args.size)
    try:
        nm, gt = synthesize(desc, args.size, args.size, cam)
    except Exception as exc:  # noqa: BLE001
        log.error("synthesis failed: %s", exc)
        return 2
    if args.noise > 0:
        nm = add_noise(nm, args.noise, seed=args.seed)
    try:
        if args.encoding == "f32":
            np.save(args.out, nm.normals.astype(np.float32))
            import cv2

            cv2.imwrite(args.mask_out, nm.mask.astype(np.uint8) * 255)
        else:
            encode(nm, args.out, args.encoding, mask_path=args.mask_out)
        save_ground_truth(gt, args.gt_out)
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return 1
    log.info("wrote %s, %s, %s", args.out, args.mask_out, args.gt_out)
    return 0


def _cmd_sweep(parser, args) -> int:
    import os as _os

    from . import evaluate as ev
    from .remesh import RemeshConfig

    cam = _camera_from_args(parser, args)
    desc = _scene_descriptor(parser, args, args.size)
    base = RemeshConfig.with_vertex_target(
        args.vertices, lam=args.lam, alpha=args.alpha,
        iterations=args.iterations)
    if args.command == "sweep-threshold":
        kind, values = "thresholds", _parse_list(parser, args.thresholds, float)
    elif args.command == "sweep-noise":
        kind, values = "noise", _parse_list(parser, args.sigmas, float)
    else:
        kind, values = "resolutions", _parse_list(parser, args.resolutions, int)

    reports = ev.sweep(kind, values, desc, args.size, cam, base,
                       seed=args.seed, vertex_fraction=args.fraction)
    _os.makedirs(args.outdir, exist_ok=True)
    csv_path = _os.path.join(args.outdir, f"{args.command}.csv")
    ev.write_csv(reports, csv_path)
    for r in reports:
        if r.error_image is not None:
            safe = r.label.replace("=", "_").replace(".", "p")
            ev.write_error_map(r, _os.path.join(args.outdir, f"err_{safe}.png"))
    log.info("wrote %s", csv_path)
    failed = [r.label for r in reports if "FAILED" in r.label]
    if failed:
        log.error("sweep points failed: %s", failed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
