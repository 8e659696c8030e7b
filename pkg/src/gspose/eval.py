"""Trajectory alignment, pose and image metrics, and pose-noise protocols.

Trajectories hold camera-to-world poses, so a pose's translation is the
camera center. The optimizer works with world-to-camera poses; use
``Trajectory.from_world_to_cam`` to convert.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from gspose import lie
from gspose.errors import Degenerate, DimensionMismatch
from gspose.lie import Se3Pose


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Se3Pose, ...]
    indices: tuple[int, ...]

    def __init__(self, poses: Sequence[Se3Pose], indices: Sequence[int] | None = None):
        poses = tuple(poses)
        if not poses:
            raise ValueError("trajectory must contain at least one pose")
        indices = tuple(range(len(poses))) if indices is None else tuple(int(i) for i in indices)
        if len(indices) != len(poses):
            raise ValueError(f"{len(indices)} indices for {len(poses)} poses")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("trajectory indices must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_world_to_cam(cls, poses: Sequence[Se3Pose], indices=None) -> "Trajectory":
        return cls([p.inverse() for p in poses], indices)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True)
class Similarity:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply_points(self, pts) -> np.ndarray:
        return self.scale * np.asarray(pts, dtype=float) @ self.rotation.T + self.translation

    def apply_pose(self, cam_to_world: Se3Pose) -> Se3Pose:
        return Se3Pose(self.rotation @ cam_to_world.rotation,
                       self.scale * self.rotation @ cam_to_world.translation + self.translation)

    def apply(self, traj: Trajectory) -> Trajectory:
        return Trajectory([self.apply_pose(p) for p in traj.poses], traj.indices)


def _same_length(pred: Trajectory, gt: Trajectory):
    if len(pred) != len(gt):
        raise DimensionMismatch(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")


def procrustes_align(pred: Trajectory, gt: Trajectory) -> Similarity:
    """Closed-form similarity (Umeyama) mapping predicted camera centers onto ground truth."""
    _same_length(pred, gt)
    if len(pred) < 3:
        raise Degenerate(f"alignment needs at least 3 poses, got {len(pred)}")
    src, dst = pred.centers, gt.centers
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.mean(np.sum(xs * xs, axis=1))
    if var_s <= 1e-300 or np.mean(np.sum(xd * xd, axis=1)) <= 1e-300:
        raise Degenerate("camera centers have zero variance")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float(np.sum(d * sign) / var_s)
    return Similarity(scale, rot, mu_d - scale * rot @ mu_s)


def ate(pred: Trajectory, gt: Trajectory) -> float:
    """RMSE of camera-center distances after similarity alignment."""
    sim = procrustes_align(pred, gt)
    diff = sim.apply_points(pred.centers) - gt.centers
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def rpe(pred: Trajectory, gt: Trajectory, stride: int = 1, reduce: Literal["mean", "rmse"] = "mean",
        align: bool = True) -> tuple[float, float]:
    """Relative pose error ``(rpe_t, rpe_r)``; rotations in degrees.

    Alignment needs at least three poses; shorter trajectories are compared as-is.
    """
    _same_length(pred, gt)
    if len(pred) < 2:
        raise Degenerate("RPE needs at least 2 poses")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if align and len(pred) >= 3:
        pred = procrustes_align(pred, gt).apply(pred)
    trans, rots = [], []
    for i in range(len(pred) - stride):
        rel_gt = gt.poses[i].inverse() @ gt.poses[i + stride]
        rel_pred = pred.poses[i].inverse() @ pred.poses[i + stride]
        delta = rel_gt.inverse() @ rel_pred
        trans.append(np.linalg.norm(delta.translation))
        rots.append(np.degrees(lie.rotation_angle(delta.rotation)))
    if not trans:
        raise Degenerate(f"stride {stride} leaves no pose pairs")
    trans, rots = np.array(trans), np.array(rots)
    if reduce == "rmse":
        return float(np.sqrt(np.mean(trans**2))), float(np.sqrt(np.mean(rots**2)))
    return float(trans.mean()), float(rots.mean())


def abs_pose_error(pred: Se3Pose, gt: Se3Pose) -> tuple[float, float]:
    """Rotation angle (degrees) and center distance between two camera-to-world poses."""
    rot = np.degrees(lie.rotation_angle(pred.rotation @ gt.rotation.T))
    return float(rot), float(np.linalg.norm(pred.translation - gt.translation))


def w2c_pose_error(pred: Se3Pose, gt: Se3Pose) -> tuple[float, float]:
    return abs_pose_error(pred.inverse(), gt.inverse())


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10 * np.log10(1.0 / mse))


def _axis_rotation(axis: int, angle: float) -> np.ndarray:
    omega = np.zeros(3)
    omega[axis] = angle
    return lie.so3_exp(omega)


def perturb_pose(pose: Se3Pose, rot_range_deg: float, trans_range: float,
                 rng: np.random.Generator) -> Se3Pose:
    """Rotate a world-to-camera pose about its own x, y, z axes in turn, then shift its center.

    Angles are uniform in [-rot_range_deg, rot_range_deg] and center offsets
    uniform in [-trans_range, trans_range] per world axis. Rotations keep the
    camera center fixed.
    """
    if rot_range_deg < 0 or trans_range < 0:
        raise ValueError("ranges must be non-negative")
    angles = np.radians(rng.uniform(-rot_range_deg, rot_range_deg, 3))
    offset = rng.uniform(-trans_range, trans_range, 3)
    c2w = pose.inverse()
    rot = c2w.rotation
    for axis in range(3):
        rot = rot @ _axis_rotation(axis, angles[axis])
    return Se3Pose(rot, c2w.translation + offset).inverse()


def perturb_pose_tangent(pose: Se3Pose, sigma: float, rng: np.random.Generator) -> Se3Pose:
    """Exp(n) * pose with n ~ N(0, sigma^2 I_6)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return lie.exp(rng.normal(scale=sigma, size=6)) @ pose
