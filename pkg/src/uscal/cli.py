"""Command-line entry point: ``uscal <command> [options]``.

Exit status is 0 on success, 1 for usage and input errors and 2 for numerical
failures. Every error prints ``ERROR <Code>: <message>`` as its first stderr
line.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .absolute_orientation import solve_horn, solve_svd_oracle
from .bscan import BScanGeometry, BScanImage, detect_circle, read_pgm
from .calibrate import AXES, build_correspondences, calibrate, filter_and_recalibrate
from .dataset_io import (
    Dataset,
    fmt,
    load_corners,
    load_dataset,
    load_intrinsics,
    save_dataset,
    save_result,
    write_noise_csv,
)
from .errors import NoCircleFound, AmbiguousPeak, UscalError
from .geom3d import rotation_angle_between
from .phantom import PRESETS
from .planar_pose import PlanarTarget, estimate_pose
from .synthetic import NoiseSpec, SyntheticConfig, generate_dataset, noise_study


class UsageError(UscalError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _board(text: str) -> tuple[int, int]:
    try:
        r, c = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return r, c


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uscal", description="Freehand ultrasound probe calibration with a hemisphere phantom.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset with known ground truth")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=20)
    g.add_argument("--phantom", choices=sorted(PRESETS), default="hemisphere")
    g.add_argument("--sigma-t", type=float, default=0.0, help="marker translation noise (mm)")
    g.add_argument("--sigma-rot", type=float, default=0.0, help="marker rotation noise (rad)")
    g.add_argument("--sigma-px", type=float, default=0.0, help="feature pixel noise (px)")
    g.add_argument("--artifacts", choices=["none", "speckle", "speckle+walls"], default="speckle")
    g.add_argument("--no-images", action="store_true", help="skip rendering B-scans")

    c = sub.add_parser("calibrate", help="solve for the image-to-marker transform")
    c.add_argument("--dataset", required=True, type=Path)
    c.add_argument("--mode", choices=["rigid", "similarity"], default="rigid")
    c.add_argument("--out", type=Path)
    c.add_argument("--label")
    c.add_argument("--detect", action="store_true", help="locate the landmark in each image instead of features.csv")
    c.add_argument("--r-min", type=float)
    c.add_argument("--r-max", type=float)

    e = sub.add_parser("evaluate", help="backprojection error report, optional outlier filtering")
    e.add_argument("--dataset", required=True, type=Path)
    e.add_argument("--mode", choices=["rigid", "similarity"], default="rigid")
    e.add_argument("--threshold", type=float, help="drop frames whose largest BRE axis exceeds this (mm)")
    e.add_argument("--out", type=Path)
    e.add_argument("--label")

    d = sub.add_parser("detect", help="find the hemisphere arc in one PGM image")
    d.add_argument("--image", required=True, type=Path)
    d.add_argument("--r-min", type=float, required=True)
    d.add_argument("--r-max", type=float, required=True)

    n = sub.add_parser("noise-study", help="residual spread versus tracking noise")
    n.add_argument("--sigmas", type=_floats, default=[0.0, 0.5, 1.0, 2.0])
    n.add_argument("--trials", type=int, default=100)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--frames", type=int, default=20)
    n.add_argument("--field", choices=["sigma_t", "sigma_rot", "sigma_px"], default="sigma_t")
    n.add_argument("--mode", choices=["rigid", "similarity"], default="rigid")
    n.add_argument("--out", type=Path)

    q = sub.add_parser("pose", help="planar target pose from corner observations")
    q.add_argument("--intrinsics", required=True, type=Path)
    q.add_argument("--corners", required=True, type=Path)
    tgt = q.add_mutually_exclusive_group(required=True)
    tgt.add_argument("--board", type=_board, help="inner-corner grid, ROWSxCOLS")
    tgt.add_argument("--quad", type=float, help="square marker side (mm)")
    q.add_argument("--square", type=float, help="checkerboard square size (mm)")
    q.add_argument("--out", type=Path)

    x = sub.add_parser("cross-check", help="compare the quaternion solver with the SVD solver")
    x.add_argument("--dataset", required=True, type=Path)
    x.add_argument("--mode", choices=["rigid", "similarity"], default="rigid")
    x.add_argument("--label")
    return p


# -- commands ---------------------------------------------------------------------


def cmd_generate(args, out) -> int:
    if args.frames < 3:
        raise UsageError("--frames must be at least 3")
    noise = NoiseSpec(args.sigma_t, args.sigma_rot, args.sigma_px)
    cfg = SyntheticConfig(n_frames=args.frames, seed=args.seed, noise=noise, phantom=PRESETS[args.phantom]())
    render = not args.no_images and cfg.phantom.kind == "hemisphere"
    frames = generate_dataset(cfg, render=render, artifacts=args.artifacts)
    settings = {
        "seed": args.seed,
        "n_frames": args.frames,
        "sigma_t": noise.sigma_t,
        "sigma_rot": noise.sigma_rot,
        "sigma_px": noise.sigma_px,
        "artifacts": args.artifacts if render else "none",
    }
    ds = Dataset(None, cfg.phantom, cfg.geometry, frames, "synthetic", settings, cfg.T_UM_true)
    save_dataset(ds, args.out)
    print(f"wrote {len(frames)} frames to {args.out}", file=out)
    return 0


def _radius_range(ds: Dataset, args) -> tuple[float, float]:
    # the arc can be anything from a sliver to the full sphere radius
    g = ds.geometry
    r_full = (ds.phantom.hemisphere_radius or 0.0) / min(g.s_x, g.s_y)
    r_min = args.r_min if args.r_min is not None else max(5.0, 0.3 * r_full)
    r_max = args.r_max if args.r_max is not None else 1.1 * r_full
    return r_min, r_max


def _detect_features(ds: Dataset, args, err) -> list:
    if ds.phantom.kind != "hemisphere":
        raise UsageError("--detect needs a hemisphere phantom")
    if not ds.has_images:
        raise UsageError(f"--detect needs images in {ds.root}/images")
    r_min, r_max = _radius_range(ds, args)
    frames = []
    for f in ds.frames:
        try:
            det = detect_circle(f.bscan, r_min, r_max)
            frames.append(replace(f, feature_px=det.center_px))
        except (NoCircleFound, AmbiguousPeak) as e:
            print(f"warning: frame {f.frame_id}: {e.code}: {e}", file=err)
            frames.append(replace(f, feature_px=None))
    return frames


def _report(res, out, title="calibration") -> None:
    T = res.T_UM
    print(f"# {title} ({res.mode}, {len(res.frames_used)} frames)", file=out)
    print("T_UM.q = " + " ".join(fmt(v) for v in T.rotation.as_array()), file=out)
    print("T_UM.t = " + " ".join(fmt(v) for v in T.t) + " mm", file=out)
    print(f"T_UM.scale = {fmt(T.scale)}", file=out)
    print(f"rms_residual = {res.rms_residual:.6f} mm", file=out)
    for a in AXES:
        s = res.stats[a]
        print(f"bre.{a}: std {s.std:.4f}  mean {s.mean:.4f}  min {s.min:.4f}  max {s.max:.4f} mm", file=out)


def cmd_calibrate(args, out, err) -> int:
    ds = load_dataset(args.dataset)
    frames = _detect_features(ds, args, err) if args.detect else ds.frames
    res = calibrate(frames, ds.phantom, ds.geometry, args.mode, args.label)
    if args.out:
        save_result(res, args.out)
    _report(res, out)
    return 0


def cmd_evaluate(args, out, err) -> int:
    ds = load_dataset(args.dataset)
    res = calibrate(ds.frames, ds.phantom, ds.geometry, args.mode, args.label)
    _report(res, out, "all frames")
    print("frame_id,dx_mm,dy_mm,dz_mm", file=out)
    for fid, dx, dy, dz in res.per_frame_bre:
        print(f"{fid},{dx:.6f},{dy:.6f},{dz:.6f}", file=out)
    if args.threshold is not None:
        if not args.threshold > 0:
            raise UsageError("--threshold must be positive")
        res = filter_and_recalibrate(res, ds.frames, ds.phantom, ds.geometry, args.threshold, args.label)
        dropped = sorted({f for f, *_ in res.per_frame_bre} - set(res.frames_used))
        print(f"dropped: {' '.join(map(str, dropped)) or '-'}", file=out)
        _report(res, out, f"after filtering at {args.threshold:g} mm")
    if args.out:
        save_result(res, args.out)
    return 0


def cmd_detect(args, out) -> int:
    if not args.r_min < args.r_max:
        raise UsageError("--r-min must be smaller than --r-max")
    if args.r_min <= 0:
        raise UsageError("--r-min must be positive")
    px = read_pgm(args.image)
    H, W = px.shape
    if max(H, W) <= 2 * args.r_min:
        raise UsageError(f"image {W}x{H} is too small for r_min {args.r_min:g}")
    det = detect_circle(BScanImage(BScanGeometry(W, H, 1.0, 1.0), px), args.r_min, args.r_max)
    a, b = det.center_px
    print(f"{a:.4f} {b:.4f} {det.radius_px:.4f} {det.score:.4f}", file=out)
    return 0


def cmd_noise_study(args, out) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.frames < 3:
        raise UsageError("--frames must be at least 3")
    if not args.sigmas or min(args.sigmas) < 0:
        raise UsageError("--sigmas must be non-negative")
    cfg = SyntheticConfig(n_frames=args.frames, seed=args.seed)
    rows = noise_study(cfg, args.sigmas, args.trials, args.field, args.mode)
    if args.out:
        write_noise_csv(rows, args.out)
    else:
        write_noise_csv(rows, out)
    return 0


def cmd_pose(args, out) -> int:
    intr = load_intrinsics(args.intrinsics)
    if args.board is not None:
        if args.square is None or not args.square > 0:
            raise UsageError("--board needs a positive --square")
        target = PlanarTarget.checkerboard(*args.board, args.square)
    else:
        if not args.quad > 0:
            raise UsageError("--quad must be positive")
        target = PlanarTarget.quad(args.quad)
    corners = load_corners(args.corners)
    if not corners:
        raise UsageError(f"{args.corners}: no corner rows")
    lines = ["frame_id,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm,rms_px,iterations"]
    for fid, obs in corners.items():
        if len(obs) != len(target):
            raise UsageError(f"frame {fid}: {len(obs)} corners for a {len(target)}-point target")
        est = estimate_pose(intr, target, obs)
        vals = [*est.pose.rotation.as_array(), *est.pose.t, est.rms_reprojection]
        lines.append(",".join([str(fid), *(fmt(v) for v in vals), str(est.iterations)]))
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return 0


def cmd_cross_check(args, out) -> int:
    ds = load_dataset(args.dataset)
    c = build_correspondences(ds.frames, ds.phantom, ds.geometry, args.label)
    h, s = solve_horn(c, args.mode), solve_svd_oracle(c, args.mode)
    d_rot = rotation_angle_between(h.transform.rotation, s.transform.rotation)
    d_t = float(np.linalg.norm(h.transform.t - s.transform.t))
    d_s = abs(h.transform.scale - s.transform.scale)
    print(f"pairs = {c.N}", file=out)
    print(f"rms_residual.quaternion = {h.rms_residual:.9g} mm", file=out)
    print(f"rms_residual.svd = {s.rms_residual:.9g} mm", file=out)
    print(f"rotation_difference = {d_rot:.3e} rad", file=out)
    print(f"translation_difference = {d_t:.3e} mm", file=out)
    print(f"scale_difference = {d_s:.3e}", file=out)
    return 0


def run_cli(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command == "generate":
            return cmd_generate(args, out)
        if args.command == "calibrate":
            return cmd_calibrate(args, out, err)
        if args.command == "evaluate":
            return cmd_evaluate(args, out, err)
        if args.command == "detect":
            return cmd_detect(args, out)
        if args.command == "noise-study":
            return cmd_noise_study(args, out)
        if args.command == "pose":
            return cmd_pose(args, out)
        return cmd_cross_check(args, out)
    except UscalError as e:
        print(f"ERROR {e.code}: {e}", file=err)
        return e.exit_code
    except (ValueError, OSError) as e:
        print(f"ERROR InvalidInput: {e}", file=err)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)


def main() -> None:
    sys.exit(run_cli())
