"""Command-line entry point: ``gspose <command> [options]``.

Exit codes: 0 success, 1 usage or validation error, 2 optimization diverged.
Every command that writes a directory also writes ``config.yaml`` with the
fully resolved configuration; passing it back via ``--config`` reproduces
the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from gspose import eval as ev
from gspose import losses
from gspose import rasterizer as rz
from gspose import trainer as tr
from gspose.camera import Camera
from gspose.config import RunConfig, dump_config, load_config, parse_override, resolve
from gspose.errors import Degenerate, Diverged, GsposeError
from gspose.io import (SceneBundle, load_scene, load_trajectory, read_image, save_scene, save_trajectory,
                       write_image)
from gspose.ply import read_ply, write_ply
from gspose.synth import synth_scene

log = logging.getLogger("gspose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p: argparse.ArgumentParser, out_help="output directory"):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.iterations=2000 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gspose", description="Gaussian splatting with camera pose optimization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    _add_common(p)
    p.add_argument("--gaussians", type=int)
    p.add_argument("--cameras", type=int)
    p.add_argument("--trajectory", choices=["orbit", "forward-facing", "random-walk"])
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--init-points", type=int, default=None, help="size of the noisy initial point cloud")

    p = sub.add_parser("render", help="render a cloud from a camera")
    p.add_argument("--cloud", required=True)
    p.add_argument("--camera", required=True, help="JSON with fx, fy, cx, cy, width, height, pose")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))

    for name, text in (("fit", "reconstruct with known poses"), ("refine", "jointly refine poses and scene")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--scene", required=True)
        p.add_argument("--iterations", type=int)
        if name == "refine":
            p.add_argument("--noise-sigma", type=float, help="tangent-space noise added to known poses")
            p.add_argument("--init-poses", help="JSON pose list to start from instead of the scene poses")

    p = sub.add_parser("estimate-pose", help="estimate one camera pose against a trained cloud")
    _add_common(p)
    p.add_argument("--cloud", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--camera", required=True, help="JSON camera holding the initial pose")

    p = sub.add_parser("bootstrap", help="pose-free trajectory from frames and depth")
    _add_common(p)
    p.add_argument("--scene", required=True)

    p = sub.add_parser("eval", help="trajectory and image metrics")
    p.add_argument("--pred", required=True, help="predicted world-to-camera poses (JSON)")
    p.add_argument("--gt", required=True, help="ground-truth poses (JSON list or cameras.json)")
    p.add_argument("--pred-images")
    p.add_argument("--gt-images")
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.add_argument("--rpe-reduce", choices=["mean", "rmse"], default="mean")
    return parser


def _run_config(args, extra: list[tuple[list[str], object]]) -> RunConfig:
    file_data = load_config(args.config) if args.config else {}
    overrides = [parse_override(s) for s in args.overrides]
    if args.seed is not None:
        overrides.append((["seed"], args.seed))
    return resolve(file_data, [o for o in extra if o[1] is not None] + overrides)


def _prepare_out(args, cfg: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def _read_camera(path) -> Camera:
    return Camera.from_dict(json.loads(Path(path).read_text()))


def _init_cloud(bundle: SceneBundle, poses, cfg: RunConfig):
    if bundle.init_cloud is not None:
        return bundle.init_cloud
    if bundle.depths is None:
        raise GsposeError("scene has neither init_cloud.ply nor depth maps to initialize from")
    return tr.init_cloud_from_depths(bundle.images, bundle.depths, poses, bundle.intrinsics,
                                     cfg.train.unproject_points, sh_degree=cfg.train.max_sh_degree)


def _trajectory_metrics(pred, gt) -> dict:
    tp, tg = ev.Trajectory.from_world_to_cam(pred), ev.Trajectory.from_world_to_cam(gt)
    out: dict = {}
    try:
        if len(pred) >= 3:
            out["ate"] = ev.ate(tp, tg)
        if len(pred) >= 2:
            out["rpe_t"], out["rpe_r"] = ev.rpe(tp, tg)
    except Degenerate as exc:
        log.warning("trajectory metrics skipped: %s", exc)
    return out


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=1))


def cmd_synth(args) -> int:
    cfg = _run_config(args, [(["synth", "n_gaussians"], args.gaussians), (["synth", "n_cameras"], args.cameras),
                             (["synth", "trajectory"], args.trajectory), (["synth", "width"], args.width),
                             (["synth", "height"], args.height), (["synth", "init_points"], args.init_points)])
    if args.init_points is None and cfg.synth.init_points == 0:
        cfg = cfg.model_copy(update={"synth": cfg.synth.model_copy(update={"init_points": cfg.synth.n_gaussians})})
    out = _prepare_out(args, cfg)
    bundle, cloud = synth_scene(cfg.synth, cfg.seed, cfg.train.background)
    save_scene(out, bundle)
    write_ply(out / "gt_cloud.ply", cloud)
    log.info("wrote %d views to %s", len(bundle.images), out)
    return 0


def cmd_render(args) -> int:
    cloud = read_ply(args.cloud)
    cam = _read_camera(args.camera)
    write_image(args.out, rz.render(cloud, cam, args.background).image)
    return 0


def _train(args, optimize: bool) -> int:
    extra = [(["train", "iterations"], args.iterations)]
    if optimize:
        extra.append((["noise_sigma"], args.noise_sigma))
    extra.append((["train", "optimize_poses"], optimize))
    cfg = _run_config(args, extra)
    bundle = load_scene(args.scene)
    out = _prepare_out(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    gt = bundle.poses
    if not optimize and gt is None:
        raise GsposeError("fit needs a scene with known poses")
    if optimize and getattr(args, "init_poses", None):
        init = load_trajectory(args.init_poses)
    else:
        init = bundle.initial_poses()
        if optimize and gt is not None:
            if cfg.noise_sigma > 0:
                init = [ev.perturb_pose_tangent(p, cfg.noise_sigma, rng) for p in init]
            if cfg.rot_noise_deg > 0 or cfg.trans_noise > 0:
                init = [ev.perturb_pose(p, cfg.rot_noise_deg, cfg.trans_noise, rng) for p in init]
    if len(init) != len(bundle.images):
        raise GsposeError(f"{len(init)} initial poses for {len(bundle.images)} images")
    cloud0 = _init_cloud(bundle, init, cfg)
    res = tr.joint_optimize(bundle.images, init, cloud0, bundle.intrinsics, cfg.train, rng,
                            gt_poses=gt, out_dir=out)
    write_ply(out / "cloud.ply", res.cloud)
    save_trajectory(out / "poses.json", res.poses)
    save_trajectory(out / "init_poses.json", init)
    tr.write_history_csv(out / "history.csv", res.history)
    psnrs = [ev.psnr(rz.render(res.cloud, Camera.from_intrinsics(bundle.intrinsics, p),
                               cfg.train.background).image, im) for p, im in zip(res.poses, bundle.images)]
    metrics: dict = {"train_psnr": float(np.mean(psnrs)), "n_gaussians": len(res.cloud),
                     "final_loss": res.history[-1]["total"]}
    if gt is not None and optimize:
        metrics["initial"] = _trajectory_metrics(init, gt)
        metrics.update(_trajectory_metrics(res.poses, gt))
    _write_json(out / "metrics.json", metrics)
    log.info("metrics: %s", metrics)
    return 0


def cmd_estimate_pose(args) -> int:
    cfg = _run_config(args, [])
    cloud = read_ply(args.cloud)
    cam = _read_camera(args.camera)
    image = read_image(args.image)
    out = _prepare_out(args, cfg)
    est = tr.estimate_pose(cloud, image, cam.world_to_cam, cam.intrinsics, cfg.train)
    _write_json(out / "pose.json", {"pose": est.pose.to_list(), "converged": est.converged,
                                    "steps_used": est.steps_used, "final_loss": est.final_loss})
    return 0


def cmd_bootstrap(args) -> int:
    cfg = _run_config(args, [])
    bundle = load_scene(args.scene)
    if bundle.depths is None:
        raise GsposeError("bootstrap needs depth maps in the scene directory")
    out = _prepare_out(args, cfg)
    boot = tr.bootstrap_trajectory(bundle.images, bundle.depths, bundle.intrinsics, cfg.train)
    save_trajectory(out / "poses.json", boot.poses)
    metrics: dict = {"failed_pairs": boot.failed}
    if bundle.poses is not None:
        # express ground truth relative to the first camera, as the bootstrap does
        anchor = bundle.poses[0].inverse()
        metrics.update(_trajectory_metrics(boot.poses, [p @ anchor for p in bundle.poses]))
    _write_json(out / "metrics.json", metrics)
    return 0


def _image_dir(path) -> list[Path]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise GsposeError(f"{path}: no images found")
    return files


def cmd_eval(args) -> int:
    pred, gt = load_trajectory(args.pred), load_trajectory(args.gt)
    if len(pred) != len(gt):
        raise GsposeError(f"{len(pred)} predicted poses vs {len(gt)} ground-truth poses")
    tp, tg = ev.Trajectory.from_world_to_cam(pred), ev.Trajectory.from_world_to_cam(gt)
    report: dict = {"psnr": None, "ssim": None, "ate": None, "rpe_t": None, "rpe_r": None}
    aligned = tp
    if len(pred) >= 3:
        report["ate"] = ev.ate(tp, tg)
        aligned = ev.procrustes_align(tp, tg).apply(tp)
    if len(pred) >= 2:
        report["rpe_t"], report["rpe_r"] = ev.rpe(tp, tg, reduce=args.rpe_reduce)
    per_frame = []
    for i, (a, b) in enumerate(zip(aligned.poses, tg.poses)):
        rot, trans = ev.abs_pose_error(a, b)
        per_frame.append({"index": i, "rot_err": rot, "trans_err": trans})
    if args.pred_images and args.gt_images:
        pa, pb = _image_dir(args.pred_images), _image_dir(args.gt_images)
        if len(pa) != len(pb):
            raise GsposeError(f"{len(pa)} predicted images vs {len(pb)} ground-truth images")
        ps, ss = [], []
        for i, (fa, fb) in enumerate(zip(pa, pb)):
            a, b = read_image(fa), read_image(fb)
            ps.append(ev.psnr(a, b))
            ss.append(losses.ssim(a, b))
            if i < len(per_frame):
                per_frame[i].update(psnr=ps[-1], ssim=ss[-1])
        report["psnr"] = float(np.mean(ps))
        report["ssim"] = float(np.mean(ss))
    report["per_frame"] = per_frame
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_json(args.out, report)
    return 0


COMMANDS = {"synth": cmd_synth, "render": cmd_render, "fit": lambda a: _train(a, False),
            "refine": lambda a: _train(a, True), "estimate-pose": cmd_estimate_pose,
            "bootstrap": cmd_bootstrap, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Diverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, GsposeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
