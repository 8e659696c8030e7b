"""Optimization loops: Adam updates, schedules, density control and the pose pipelines.

All poses handled here are world-to-camera. Camera updates are retractions
``Exp(-step) @ pose`` in the left tangent frame, the frame in which the
rasterizer reports pose gradients.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gspose import lie, losses
from gspose import rasterizer as rz
from gspose.camera import Camera, Intrinsics
from gspose.errors import Diverged, EmptyMask
from gspose.eval import w2c_pose_error
from gspose.io import save_trajectory
from gspose.lie import Se3Pose
from gspose.losses import LossConfig
from gspose.ply import write_ply
from gspose.scene import DepthMap, GaussianCloud, init_from_points, logit, quat_to_rotmat, unproject

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    iterations: int = Field(30000, gt=0)
    cam_lr_start: float = Field(1e-2, gt=0)
    cam_lr_end: float = Field(1e-4, gt=0)
    pos_lr_start: float = Field(1.6e-2, gt=0)
    pos_lr_end: float = Field(1.6e-4, gt=0)
    feature_lr: float = Field(0.0025, gt=0)
    feature_rest_lr: float = Field(0.0025 / 20, gt=0)
    opacity_lr: float = Field(0.05, gt=0)
    scaling_lr: float = Field(0.005, gt=0)
    rotation_lr: float = Field(0.001, gt=0)

    densify_interval: int = Field(100, gt=0)
    densify_from: int = Field(500, ge=0)
    densify_until: int = Field(15000, ge=0)
    grad_threshold: float = Field(2e-4, gt=0)
    percent_dense: float = Field(0.01, gt=0)
    n_target: int = Field(256000, gt=0)
    min_opacity: float = Field(0.005, ge=0, lt=1)
    opacity_reset_interval: int = Field(3000, ge=0)
    opacity_l1_steps: int = Field(10000, ge=0)
    sh_degree_interval: int = Field(1000, ge=0)
    max_sh_degree: int = Field(3, ge=0, le=3)

    relpose_lr_start: float = Field(1e-3, gt=0)
    relpose_lr_end: float = Field(1e-4, gt=0)
    relpose_steps: int = Field(200, ge=0)
    per_frame_fit_steps: int = Field(100, ge=0)
    testtime_steps: int = Field(200, ge=0)
    unproject_points: int = Field(50000, gt=0)
    frame_init_opacity: float = Field(0.9, gt=0, lt=1)
    pose_estimation_steps: int = Field(1000, ge=0)
    pose_convergence_tol: float = Field(1e-7, gt=0)
    min_mask_fraction: float = Field(0.05, ge=0, lt=1)

    optimize_poses: bool = True
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    checkpoint_interval: int = Field(0, ge=0)
    log_interval: int = Field(100, gt=0)
    loss: LossConfig = LossConfig()
    raster: rz.RasterConfig = rz.DEFAULT_RASTER

    @model_validator(mode="after")
    def _ends_below_starts(self):
        for name in ("cam_lr", "pos_lr", "relpose_lr"):
            if getattr(self, f"{name}_end") > getattr(self, f"{name}_start"):
                raise ValueError(f"{name}_end must not exceed {name}_start")
        return self


def schedule(kind: Literal["cosine", "exponential"], start: float, end: float, step: int, total: int) -> float:
    if total <= 0:
        return end
    frac = min(max(step / total, 0.0), 1.0)
    if kind == "cosine":
        return end + (start - end) * (1 + math.cos(math.pi * frac)) / 2
    if kind == "exponential":
        return start * (end / start) ** frac
    raise ValueError(f"unknown schedule kind {kind!r}")


# optimizer


@dataclass
class PoseMoments:
    m: np.ndarray = field(default_factory=lambda: np.zeros(6))
    v: np.ndarray = field(default_factory=lambda: np.zeros(6))
    step: int = 0

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseMoments":
        return cls(np.asarray(d["m"], float), np.asarray(d["v"], float), int(d["step"]))


def _adam_direction(m, v, g, step):
    m *= ADAM_BETA1
    m += (1 - ADAM_BETA1) * g
    v *= ADAM_BETA2
    v += (1 - ADAM_BETA2) * g * g
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    return m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def pose_step(pose: Se3Pose, d_pose, lr: float, state: PoseMoments) -> tuple[Se3Pose, np.ndarray]:
    """One Adam step on the left tangent. Returns the new pose and the applied tangent update."""
    g = np.asarray(d_pose, dtype=float)
    if not np.all(np.isfinite(g)):
        raise Diverged("non-finite pose gradient")
    state.step += 1
    update = lr * _adam_direction(state.m, state.v, g, state.step)
    if not np.any(update):
        return pose, update
    return (lie.exp(-update) @ pose).orthonormalized(), update


class GaussianAdam:
    """Adam over the cloud's parameter arrays with one moment pair per array."""

    def __init__(self, cloud: GaussianCloud):
        self.m = {k: np.zeros_like(v) for k, v in cloud.param_arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in cloud.param_arrays().items()}
        self.step = 0

    def update(self, cloud: GaussianCloud, grads: dict[str, np.ndarray], lrs: dict[str, np.ndarray | float]):
        self.step += 1
        for name, g in grads.items():
            direction = _adam_direction(self.m[name], self.v[name], g, self.step)
            arr = getattr(cloud, name)
            arr -= lrs[name] * direction

    def remap(self, source: np.ndarray):
        """Follow a densify/prune: rows with source -1 start from zero moments."""
        fresh = source < 0
        src = np.where(fresh, 0, source)
        for store in (self.m, self.v):
            for name, arr in store.items():
                moved = arr[src] if len(arr) else np.zeros((len(source),) + arr.shape[1:])
                moved[fresh] = 0
                store[name] = moved

    def to_dict(self) -> dict:
        return {"step": self.step,
                "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianAdam":
        obj = cls.__new__(cls)
        obj.step = int(d["step"])
        obj.m = {k: np.asarray(v, float) for k, v in d["m"].items()}
        obj.v = {k: np.asarray(v, float) for k, v in d["v"].items()}
        return obj


def _param_lrs(cfg: TrainConfig, pos_lr: float, nb: int) -> dict:
    sh_lr = np.full((1, 1, nb), cfg.feature_rest_lr)
    sh_lr[..., 0] = cfg.feature_lr
    return {"means": pos_lr, "rotations": cfg.rotation_lr, "log_scales": cfg.scaling_lr,
            "opacity_logits": cfg.opacity_lr, "sh_coeffs": sh_lr}


# density control


class GradStats:
    """Running mean of the screen-space positional gradient norm per Gaussian.

    Pixel gradients are scaled by (W/2, H/2) to normalized device coordinates
    so the 3DGS threshold applies unchanged.
    """

    def __init__(self, n: int):
        self.accum = np.zeros(n)
        self.count = np.zeros(n)

    def add(self, visible: np.ndarray, d_mean2d: np.ndarray, width: int, height: int):
        ndc = d_mean2d[visible] * np.array([width / 2, height / 2])
        self.accum[visible] += np.linalg.norm(ndc, axis=1)
        self.count[visible] += 1

    def mean(self) -> np.ndarray:
        return np.where(self.count > 0, self.accum / np.maximum(self.count, 1), 0.0)


@dataclass
class DensifyResult:
    cloud: GaussianCloud
    source: np.ndarray  # old index per new Gaussian, -1 for newly created ones
    n_cloned: int
    n_split: int
    n_pruned: int


def prune_mask(opacities: np.ndarray, min_opacity: float, n_target: int) -> np.ndarray:
    """Keep opacity >= min_opacity; if more than n_target survive, keep only those
    strictly above the (n_target+1)-th largest opacity."""
    op = np.asarray(opacities, dtype=float).reshape(-1)
    keep = op >= min_opacity
    if np.count_nonzero(keep) > n_target:
        kth = np.partition(op, len(op) - n_target - 1)[len(op) - n_target - 1]
        keep = op > kth
    return keep


def densify_and_prune(cloud: GaussianCloud, grad_stats: GradStats, cfg: TrainConfig, extent: float,
                      rng: np.random.Generator) -> DensifyResult:
    n = len(cloud)
    avg = grad_stats.mean()
    hot = avg >= cfg.grad_threshold
    big = cloud.scales.max(axis=1) > cfg.percent_dense * extent
    clone = np.flatnonzero(hot & ~big)
    split = np.flatnonzero(hot & big)

    parts = [cloud.subset(np.setdiff1d(np.arange(n), split))]
    source = [np.setdiff1d(np.arange(n), split)]
    if len(clone):
        parts.append(cloud.subset(clone))
        source.append(np.full(len(clone), -1))
    if len(split):
        children = cloud.subset(np.repeat(split, 2))
        offsets = rng.normal(size=(len(children), 3)) * children.scales
        rot = children.unit_rotations()
        children.means = children.means + np.einsum("nij,nj->ni", quat_to_rotmat(rot), offsets)
        children.log_scales = children.log_scales - np.log(1.6)
        parts.append(children)
        source.append(np.full(len(children), -1))
    dense = GaussianCloud.concat(parts)
    source = np.concatenate(source)

    keep = prune_mask(dense.opacities, cfg.min_opacity, cfg.n_target)
    pruned = dense.subset(keep)
    return DensifyResult(pruned, source[keep], len(clone), len(split), int(len(keep) - keep.sum()))


def reset_opacity(cloud: GaussianCloud, ceiling: float = 0.01):
    cloud.opacity_logits = np.minimum(cloud.opacity_logits, float(logit(ceiling)))


def camera_extent(poses: Sequence[Se3Pose]) -> float:
    centers = np.array([p.center for p in poses])
    radius = np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)) if len(centers) > 1 else 0.0
    return 1.1 * radius if radius > 0 else 1.0


# one render/loss/backward evaluation


@dataclass
class StepTerms:
    total: float
    l1: float
    dssim: float
    aniso: float
    opacity: float
    grads: rz.GradientBundle
    out: rz.RenderOutput


def _evaluate(cloud: GaussianCloud, cam: Camera, target: np.ndarray, cfg: TrainConfig,
              with_opacity_l1: bool) -> StepTerms:
    out = rz.render(cloud, cam, cfg.background, cfg.raster)
    beta = cfg.loss.beta
    l1_val, l1_grad = losses.l1(out.image, target)
    s, s_grad = losses.ssim_with_grad(out.image, target) if beta > 0 else (1.0, 0.0)
    d_image = (1 - beta) * l1_grad - beta * s_grad
    grads = rz.backward(cloud, cam, out, d_image)
    total = (1 - beta) * l1_val + beta * (1 - s)
    aniso = 0.0
    if cfg.loss.aniso_weight > 0:
        aniso, d_ls = losses.anisotropy_loss(cloud.log_scales, cfg.loss.aniso_ratio_r)
        grads.d_log_scales += cfg.loss.aniso_weight * d_ls
        total += cfg.loss.aniso_weight * aniso
    op_val = 0.0
    if with_opacity_l1 and cfg.loss.opacity_l1_weight > 0:
        o = cloud.opacities
        op_val, d_o = losses.opacity_l1(o)
        grads.d_opacity_logits += cfg.loss.opacity_l1_weight * d_o * o * (1 - o)
        total += cfg.loss.opacity_l1_weight * op_val
    return StepTerms(total, l1_val, 1 - s, aniso, op_val, grads, out)


# joint reconstruction and pose refinement


@dataclass
class JointResult:
    cloud: GaussianCloud
    poses: list[Se3Pose]
    history: list[dict]
    optimizer: GaussianAdam
    pose_states: list[PoseMoments]


def joint_optimize(images: Sequence[np.ndarray], init_poses: Sequence[Se3Pose], init_cloud: GaussianCloud,
                   intrinsics: Intrinsics, cfg: TrainConfig, rng: np.random.Generator | None = None,
                   gt_poses: Sequence[Se3Pose] | None = None, out_dir=None) -> JointResult:
    """Alternate per-image steps on the Gaussians and that image's pose.

    ``history`` holds one row per step with the loss terms and, when
    ``gt_poses`` is given, per-camera rotation/translation errors (raw,
    not aligned).
    """
    if len(images) != len(init_poses):
        raise ValueError(f"{len(images)} images but {len(init_poses)} poses")
    if not images:
        raise ValueError("need at least one image")
    rng = rng if rng is not None else np.random.default_rng(0)
    cloud = init_cloud.copy()
    poses = list(init_poses)
    targets = [np.asarray(im, dtype=float) for im in images]
    opt = GaussianAdam(cloud)
    pose_states = [PoseMoments() for _ in poses]
    stats = GradStats(len(cloud))
    extent = camera_extent(poses)
    history: list[dict] = []
    order: np.ndarray = np.arange(0)
    k = len(images)

    for step in range(cfg.iterations):
        it = step + 1
        if step % k == 0:
            order = rng.permutation(k)
        i = int(order[step % k])
        if cfg.sh_degree_interval and it % cfg.sh_degree_interval == 0:
            cloud.active_sh_degree = min(cloud.active_sh_degree + 1, cloud.max_sh_degree, cfg.max_sh_degree)

        cam = Camera.from_intrinsics(intrinsics, poses[i])
        terms = _evaluate(cloud, cam, targets[i], cfg, step < cfg.opacity_l1_steps)
        if not math.isfinite(terms.total) or not terms.grads.is_finite():
            raise Diverged(f"loss became non-finite at step {step}")

        pos_lr = schedule("exponential", cfg.pos_lr_start, cfg.pos_lr_end, step, cfg.iterations)
        opt.update(cloud, terms.grads.param_grads(), _param_lrs(cfg, pos_lr, cloud.sh_coeffs.shape[2]))
        if cfg.optimize_poses:
            cam_lr = schedule("cosine", cfg.cam_lr_start, cfg.cam_lr_end, step, cfg.iterations)
            poses[i], _ = pose_step(poses[i], terms.grads.d_pose, cam_lr, pose_states[i])

        row = {"step": step, "image": i, "total": terms.total, "l1": terms.l1, "dssim": terms.dssim,
               "l_an": terms.aniso, "l_opacity": terms.opacity, "n_gaussians": len(cloud)}
        if gt_poses is not None:
            errs = [w2c_pose_error(p, g) for p, g in zip(poses, gt_poses)]
            row["rot_err"] = [e[0] for e in errs]
            row["trans_err"] = [e[1] for e in errs]
        history.append(row)

        if step < cfg.densify_until:
            stats.add(terms.out.visible, terms.grads.d_mean2d, intrinsics.width, intrinsics.height)
            if it > cfg.densify_from and it % cfg.densify_interval == 0:
                res = densify_and_prune(cloud, stats, cfg, extent, rng)
                cloud = res.cloud
                opt.remap(res.source)
                stats = GradStats(len(cloud))
                log.debug("step %d: cloned %d split %d pruned %d -> %d", it, res.n_cloned, res.n_split,
                          res.n_pruned, len(cloud))
            if cfg.opacity_reset_interval and it % cfg.opacity_reset_interval == 0:
                reset_opacity(cloud)
        if it % cfg.log_interval == 0:
            log.info("step %d loss %.5f gaussians %d", it, terms.total, len(cloud))
        if out_dir is not None and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            save_checkpoint(Path(out_dir) / f"checkpoint_{it:06d}", cloud, poses, opt, pose_states)
    return JointResult(cloud, poses, history, opt, pose_states)


# pose-only pipelines


@dataclass
class PoseEstimate:
    pose: Se3Pose
    converged: bool
    steps_used: int
    final_loss: float


def _pose_descent(cloud, target, init_pose, intrinsics, cfg: TrainConfig, steps, lr_start, lr_end,
                  mask_loss: bool) -> tuple[PoseEstimate, bool]:
    """Shared pose-only loop. Returns the estimate and whether the mask ever emptied."""
    pose = init_pose
    state = PoseMoments()
    target = np.asarray(target, dtype=float)
    beta = cfg.loss.beta
    lr_scale = 1.0
    sparse = False
    loss = float("nan")
    n_pix = target.shape[0] * target.shape[1]
    for step in range(steps):
        cam = Camera.from_intrinsics(intrinsics, pose)
        out = rz.render(cloud, cam, cfg.background, cfg.raster)
        if mask_loss:
            mask = losses.transmittance_mask(out.accum_transmittance, cfg.loss.mask_threshold)
            try:
                loss, d_image = losses.masked_rgb_loss(out.image, target, mask, beta)
            except EmptyMask:
                return PoseEstimate(pose, False, step, float("nan")), True
            # halve the step size each time the mask falls below the minimum fraction
            now_sparse = np.count_nonzero(mask) < cfg.min_mask_fraction * n_pix
            if now_sparse and not sparse:
                lr_scale *= 0.5
            sparse = now_sparse
        else:
            loss, d_image = losses.rgb_loss(out.image, target, beta)
        if not math.isfinite(loss):
            raise Diverged(f"pose loss became non-finite at step {step}")
        d_pose = rz.backward(cloud, cam, out, d_image).d_pose
        lr = lr_scale * schedule("cosine", lr_start, lr_end, step, steps)
        pose, update = pose_step(pose, d_pose, lr, state)
        if np.linalg.norm(update) < cfg.pose_convergence_tol:
            return PoseEstimate(pose, True, step + 1, loss), False
    return PoseEstimate(pose, False, steps, loss), False


def estimate_pose(cloud: GaussianCloud, image, init_pose: Se3Pose, intrinsics: Intrinsics,
                  cfg: TrainConfig) -> PoseEstimate:
    """Pose-only descent of rgb_loss against a frozen cloud."""
    est, _ = _pose_descent(cloud, image, init_pose, intrinsics, cfg, cfg.pose_estimation_steps,
                           cfg.cam_lr_start, cfg.cam_lr_end, mask_loss=False)
    return est


def test_time_optimize(cloud: GaussianCloud, image, init_pose: Se3Pose, intrinsics: Intrinsics,
                       cfg: TrainConfig) -> Se3Pose:
    est, _ = _pose_descent(cloud, image, init_pose, intrinsics, cfg, cfg.testtime_steps,
                           cfg.relpose_lr_start, cfg.relpose_lr_end, mask_loss=False)
    return est.pose


test_time_optimize.__test__ = False  # keep pytest from collecting it by name


def init_cloud_from_depths(images: Sequence[np.ndarray], depths: Sequence[DepthMap], poses: Sequence[Se3Pose],
                           intrinsics: Intrinsics, max_points: int, sh_degree: int = 0) -> GaussianCloud:
    """Unproject every frame's depth through its (possibly noisy) pose, splitting the point budget evenly."""
    if not (len(images) == len(depths) == len(poses)):
        raise ValueError(f"{len(images)} images, {len(depths)} depth maps, {len(poses)} poses")
    if not images:
        raise ValueError("need at least one frame")
    per_frame = max(1, max_points // len(images))
    pts, cols = zip(*[unproject(d, intrinsics, p, per_frame, image=np.asarray(im, dtype=float))
                      for im, d, p in zip(images, depths, poses)])
    return init_from_points(np.concatenate(pts), np.concatenate(cols), sh_degree=sh_degree)


def fit_frame_gaussians(frame, depth: DepthMap, intrinsics: Intrinsics, cfg: TrainConfig,
                        steps: int | None = None) -> GaussianCloud:
    """Unproject a frame into Gaussians and fit them to it with the pose frozen at identity."""
    frame = np.asarray(frame, dtype=float)
    pts, colors = unproject(depth, intrinsics, Se3Pose.identity(), cfg.unproject_points, image=frame)
    cloud = init_from_points(pts, colors, sh_degree=0)
    # start near-opaque so fitted surfaces can pass the 0.99 accumulated-alpha mask
    cloud.opacity_logits[:] = logit(cfg.frame_init_opacity)
    steps = cfg.per_frame_fit_steps if steps is None else steps
    cam = Camera.from_intrinsics(intrinsics)
    opt = GaussianAdam(cloud)
    for step in range(steps):
        terms = _evaluate(cloud, cam, frame, cfg, with_opacity_l1=False)
        if not math.isfinite(terms.total):
            raise Diverged(f"frame fit diverged at step {step}")
        pos_lr = schedule("exponential", cfg.pos_lr_start, cfg.pos_lr_end, step, steps)
        opt.update(cloud, terms.grads.param_grads(), _param_lrs(cfg, pos_lr, cloud.sh_coeffs.shape[2]))
    return cloud


@dataclass
class RelativePose:
    pose: Se3Pose
    ok: bool
    final_loss: float


def estimate_relative_pose(cloud_t: GaussianCloud, frame_next, intrinsics: Intrinsics, cfg: TrainConfig,
                           use_mask: bool = True) -> RelativePose:
    """Pose of the next camera in the frame-t camera coordinates, from identity.

    With ``use_mask`` the loss only sees pixels whose accumulated alpha
    exceeds the mask threshold. An empty mask returns identity with ok=False.
    """
    est, emptied = _pose_descent(cloud_t, frame_next, Se3Pose.identity(), intrinsics, cfg, cfg.relpose_steps,
                                 cfg.relpose_lr_start, cfg.relpose_lr_end, mask_loss=use_mask)
    if emptied:
        return RelativePose(Se3Pose.identity(), False, float("nan"))
    return RelativePose(est.pose, True, est.final_loss)


@dataclass
class Bootstrap:
    poses: list[Se3Pose]
    failed: list[int]


def bootstrap_trajectory(frames: Sequence[np.ndarray], depths: Sequence[DepthMap], intrinsics: Intrinsics,
                         cfg: TrainConfig) -> Bootstrap:
    """Chain frame-to-frame estimates into world-to-camera poses with pose 0 = identity."""
    if len(frames) < 2:
        raise ValueError("bootstrap needs at least 2 frames")
    if len(depths) < len(frames) - 1:
        raise ValueError("need a depth map for every frame but the last")
    poses = [Se3Pose.identity()]
    failed = []
    for t in range(len(frames) - 1):
        cloud = fit_frame_gaussians(frames[t], depths[t], intrinsics, cfg)
        rel = estimate_relative_pose(cloud, frames[t + 1], intrinsics, cfg)
        if not rel.ok:
            failed.append(t)
            log.warning("relative pose %d -> %d failed (empty mask); using identity", t, t + 1)
        poses.append(rel.pose @ poses[-1])
    return Bootstrap(poses, failed)


# checkpoints and history


def save_checkpoint(directory, cloud: GaussianCloud, poses: Sequence[Se3Pose], opt: GaussianAdam,
                    pose_states: Sequence[PoseMoments]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ply(directory / "cloud.ply", cloud)
    save_trajectory(directory / "poses.json", poses)
    state = {"gaussians": opt.to_dict(), "cameras": [s.to_dict() for s in pose_states],
             "active_sh_degree": cloud.active_sh_degree}
    (directory / "optimizer.json").write_text(json.dumps(state))


def write_history_csv(path, history: Sequence[dict]):
    if not history:
        Path(path).write_text("")
        return
    scalar_keys = [k for k in history[0] if not isinstance(history[0][k], list)]
    n_cams = len(history[0].get("rot_err", []))
    header = scalar_keys + [f"rot_err_{i}" for i in range(n_cams)] + [f"trans_err_{i}" for i in range(n_cams)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in history:
            writer.writerow([row[k] for k in scalar_keys] + list(row.get("rot_err", []))
                            + list(row.get("trans_err", [])))
