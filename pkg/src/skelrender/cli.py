"""Command-line surface: render scenes, generate orbit sequences, check
gradients, fit scenes to target images, and recover root depth.

Exit codes: 0 success, 1 parse/validation failure, 2 numerical failure,
3 gradient-check failure. Failures print a single machine-parsable line
``ERROR:<code>: message`` to stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .camera import orbit_cameras, pixel_to_ray_coords
from .errors import GradCheckFailure, ParseError, SkelRenderError, ValidationError
from .fitting import FitConfig, fit
from .gradients import ActiveBlocks, ParamVector, grad_check
from .renderer import render_pose
from .sceneio import SceneFile, load_scene, read_fimg, save_scene, write_fimg, write_preview
from .skeleton import Pose, Pose2D, RelativePose, solve_root_depth


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="skelrender",
        description="Render, fit, and inspect diffuse Gaussian skeleton scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene from a named camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True, help="camera name in the scene file")
    p.add_argument("--out", required=True, help="output .fimg path")
    p.add_argument("--preview", help="optional 8-bit preview image path")
    p.add_argument("--channels", default=None, help="preview channels, e.g. 0,1,2")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)

    p = sub.add_parser("orbit", help="render frames from a spherical camera orbit")
    p.add_argument("--scene", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--elevation", type=float, default=0.0, help="radians")
    p.add_argument("--camera", default=None, help="template camera name (default: first)")
    p.add_argument("--center", default=None, help="orbit center x,y,z (default: pose centroid)")
    p.add_argument("--prefix", default="frame")
    p.add_argument("--preview", action="store_true", help="also write .png previews")

    p = sub.add_parser("gradcheck", help="finite-difference check of the render gradient")
    p.add_argument("--scene", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    # Small enough that FD truncation stays below tol even at the sharp
    # paper-default alpha; roundoff is still orders of magnitude lower.
    p.add_argument("--step", type=float, default=1e-6, help="relative FD step")
    p.add_argument("--target", default=None, help=".fimg target (default: shifted self-render)")
    p.add_argument("--camera", default=None)
    p.add_argument("--blocks", default="joints,widths,appearances,background")
    p.add_argument("--loss", default="l2", choices=["l1", "l2"])

    p = sub.add_parser("fit", help="fit scene parameters to a target feature image")
    p.add_argument("--scene", required=True, help="initialization scene")
    p.add_argument("--target", required=True, help="target .fimg")
    p.add_argument("--out-scene", required=True)
    p.add_argument("--trace", default=None, help="CSV trace path")
    p.add_argument("--camera", default=None)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--loss", default="l2", choices=["l1", "l2"])
    p.add_argument("--reg", type=float, default=1e-3, help="appearance regularizer weight")
    p.add_argument("--image-weight", type=float, default=10.0)
    p.add_argument("--blocks", default="joints,appearances")
    p.add_argument("--tol", type=float, default=0.0, help="stop on loss delta below this")

    p = sub.add_parser("depth", help="closed-form root depth from 2D + relative 3D pose")
    p.add_argument("--scene", required=True, help='scene with a camera named "input"')
    p.add_argument(
        "--pose2d",
        default=None,
        help="JSON with pixel-space points (default: project the scene pose)",
    )
    return parser


def _parse_blocks(spec: str) -> ActiveBlocks:
    names = [s.strip() for s in spec.split(",") if s.strip()]
    valid = {"joints", "widths", "appearances", "background"}
    bad = [n for n in names if n not in valid]
    if bad:
        raise ValidationError(f"unknown parameter block(s): {bad}")
    return ActiveBlocks(
        joints="joints" in names,
        widths="widths" in names,
        appearances="appearances" in names,
        background="background" in names,
    )


def _scene_camera(scene: SceneFile, name):
    if name is None:
        name = next(iter(scene.cameras))
    if name not in scene.cameras:
        raise ValidationError(
            f"camera {name!r} not in scene (available: {sorted(scene.cameras)})"
        )
    return scene.cameras[name]


def _params_from_scene(scene: SceneFile, active: ActiveBlocks) -> ParamVector:
    return ParamVector(
        joints=scene.pose.joints.copy(),
        widths=scene.graph.widths.copy(),
        appearances=scene.appearances.copy(),
        background=scene.background.copy(),
        active=active,
    )


def _preview_channels(spec):
    if spec is None:
        return None
    return tuple(int(s) for s in spec.split(","))


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cam = _scene_camera(scene, args.camera)
    img, _ = render_pose(
        scene.pose.joints, scene.graph, scene.appearances, cam, scene.render_cfg
    )
    write_fimg(img, args.out)
    if args.preview:
        write_preview(img, args.preview, _preview_channels(args.channels), args.lo, args.hi)
    return 0


def _cmd_orbit(args) -> int:
    scene = load_scene(args.scene)
    template = _scene_camera(scene, args.camera)
    if args.center is not None:
        center = np.array([float(v) for v in args.center.split(",")])
        if center.size != 3:
            raise ValidationError("--center expects x,y,z")
    else:
        center = scene.pose.joints.mean(axis=0)
    cams = orbit_cameras(center, args.radius, args.elevation, args.frames, template)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pad = max(3, len(str(args.frames - 1)))
    for k, cam in enumerate(cams):
        img, _ = render_pose(
            scene.pose.joints, scene.graph, scene.appearances, cam, scene.render_cfg
        )
        stem = f"{args.prefix}_{k:0{pad}d}"
        write_fimg(img, out_dir / f"{stem}.fimg")
        if args.preview:
            write_preview(img, out_dir / f"{stem}.png")
    return 0


GRADCHECK_TARGET_SHIFT = np.array([0.01, 0.0, 0.0])


def _cmd_gradcheck(args) -> int:
    scene = load_scene(args.scene)
    cam = _scene_camera(scene, args.camera)
    params = _params_from_scene(scene, _parse_blocks(args.blocks))
    if args.target is not None:
        target = read_fimg(args.target)
    else:
        # Generic evaluation point: the gradient of a perfect self-fit is
        # zero, so check against the render of a slightly shifted pose.
        target, _ = render_pose(
            scene.pose.joints + GRADCHECK_TARGET_SHIFT,
            scene.graph,
            scene.appearances,
            cam,
            scene.render_cfg,
        )
    report = grad_check(
        params, scene.graph, cam, scene.render_cfg, target,
        h=args.step, tol=args.tol, loss_kind=args.loss,
    )
    print(report.format())
    if not report.passed:
        raise GradCheckFailure("finite-difference check failed")
    return 0


def _cmd_fit(args) -> int:
    scene = load_scene(args.scene)
    cam = _scene_camera(scene, args.camera)
    target = read_fimg(args.target)
    params = _params_from_scene(scene, _parse_blocks(args.blocks))
    fcfg = FitConfig(
        iterations=args.iters,
        step_size=args.step,
        loss_kind=args.loss,
        image_weight=args.image_weight,
        reg_weight=args.reg,
        tol=args.tol,
    )
    trace = fit(params, scene.graph, cam, scene.render_cfg, target, fcfg)
    fitted = trace.params
    out = SceneFile(
        graph=replace(scene.graph, widths=fitted.widths),
        pose=Pose(joints=fitted.joints, confidence=scene.pose.confidence),
        appearances=fitted.appearances,
        background=fitted.background,
        render_cfg=replace(scene.render_cfg, background=fitted.background),
        cameras=scene.cameras,
    )
    save_scene(out, args.out_scene)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("iteration,loss,grad_norm\n")
            for k, (lo, gn) in enumerate(zip(trace.losses, trace.grad_norms)):
                fh.write(f"{k},{lo!r},{gn!r}\n")
    print(f"fit: iterations={trace.iterations_run} final_loss={trace.losses[-1]!r}")
    return 0


def _cmd_depth(args) -> int:
    scene = load_scene(args.scene)
    if "input" not in scene.cameras:
        raise ValidationError('depth requires a camera named "input" in the scene')
    cam = scene.cameras["input"]
    cam_joints = cam.to_camera(scene.pose.joints)
    rel = RelativePose(joints=cam_joints[1:] - cam_joints[0])
    if args.pose2d is not None:
        import json

        try:
            with open(args.pose2d, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"{args.pose2d}: line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from None
        if "points" not in doc:
            raise ParseError(f"{args.pose2d}: missing field 'points'")
        pixels = np.asarray(doc["points"], dtype=float)
        points = pixel_to_ray_coords(pixels, cam)
        p2d = Pose2D(points=points, confidence=doc.get("confidence"))
    else:
        if np.any(cam_joints[:, 2] <= 0):
            raise ValidationError("scene pose must be in front of the input camera")
        p2d = Pose2D(points=cam_joints[:, :2] / cam_joints[:, 2:3])
    z = solve_root_depth(p2d, rel)
    print(z)
    return 0


_COMMANDS = {
    "render": _cmd_render,
    "orbit": _cmd_orbit,
    "gradcheck": _cmd_gradcheck,
    "fit": _cmd_fit,
    "depth": _cmd_depth,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except SkelRenderError as exc:
        print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ERROR:IO: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
