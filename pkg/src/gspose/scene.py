"""Gaussian cloud container, covariance construction and point-cloud initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gspose import sh
from gspose.camera import Intrinsics
from gspose.errors import DegenerateCloud, NoValidDepth
from gspose.lie import Se3Pose, act, inverse

INIT_OPACITY = 0.1
MIN_SCALE = 1e-7


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions (w, x, y, z). Accepts (4,) or (N, 4)."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r[0] if single else r


def quat_to_rotmat_vjp(q: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
    """Pull a gradient on the (N, 3, 3) rotation back to the (N, 4) quaternion."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = grad_r
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=-1)


def covariance3d(q, s) -> np.ndarray:
    """R(q) diag(s)^2 R(q)^T for one Gaussian or a batch."""
    q = np.asarray(q, dtype=float)
    s = np.asarray(s, dtype=float)
    r = quat_to_rotmat(q)
    m = r * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


@dataclass
class GaussianCloud:
    """Per-Gaussian parameter arrays.

    Scales are stored as logs and opacities as logits so that unconstrained
    updates keep them valid. ``sh_coeffs`` has shape (N, 3, B) with
    B = (max_degree + 1)^2; ``active_sh_degree`` may be lower while training.
    """

    means: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    active_sh_degree: int | None = field(default=None)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 3)
        n = self.means.shape[0]
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n, 1)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=float)
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[:2] != (n, 3):
            raise ValueError(f"sh_coeffs must be (N, 3, B), got {self.sh_coeffs.shape}")
        b = self.sh_coeffs.shape[2]
        degree = int(round(np.sqrt(b))) - 1
        if (degree + 1) ** 2 != b or degree > sh.MAX_DEGREE:
            raise ValueError(f"sh_coeffs has {b} bases; expected (d+1)^2 for d in 0..3")
        if self.active_sh_degree is None:
            self.active_sh_degree = degree
        if not 0 <= self.active_sh_degree <= degree:
            raise ValueError(f"active_sh_degree {self.active_sh_degree} exceeds stored degree {degree}")

    @classmethod
    def empty(cls, sh_degree: int = 3) -> "GaussianCloud":
        b = sh.num_bases(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 1)),
                   np.zeros((0, 3, b)))

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def max_sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[2]))) - 1

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def unit_rotations(self) -> np.ndarray:
        return self.rotations / np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def covariances(self) -> np.ndarray:
        return covariance3d(self.unit_rotations(), self.scales)

    def normalize_rotations(self) -> None:
        self.rotations = self.unit_rotations()

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.means.copy(), self.rotations.copy(), self.log_scales.copy(),
                             self.opacity_logits.copy(), self.sh_coeffs.copy(), self.active_sh_degree)

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(self.means[index], self.rotations[index], self.log_scales[index],
                             self.opacity_logits[index], self.sh_coeffs[index], self.active_sh_degree)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {
            "means": self.means,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
        }

    def with_sh_degree(self, degree: int) -> "GaussianCloud":
        """Copy with storage resized to ``degree`` (pads with zeros or truncates)."""
        b = sh.num_bases(degree)
        coeffs = np.zeros((len(self), 3, b))
        keep = min(b, self.sh_coeffs.shape[2])
        coeffs[:, :, :keep] = self.sh_coeffs[:, :, :keep]
        return GaussianCloud(self.means.copy(), self.rotations.copy(), self.log_scales.copy(),
                             self.opacity_logits.copy(), coeffs, min(self.active_sh_degree, degree))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.param_arrays().values())

    @staticmethod
    def concat(clouds: list["GaussianCloud"]) -> "GaussianCloud":
        first = clouds[0]
        return GaussianCloud(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.log_scales for c in clouds]),
            np.concatenate([c.opacity_logits for c in clouds]),
            np.concatenate([c.sh_coeffs for c in clouds]),
            first.active_sh_degree,
        )


@dataclass
class DepthMap:
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        valid = np.isfinite(self.values) & (self.values > 0)
        self.mask = valid if self.mask is None else (np.asarray(self.mask, dtype=bool) & valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def nearest_neighbor_scales(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points."""
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k + 1)
    return np.maximum(dist[:, 1:].mean(axis=1), MIN_SCALE)


def init_from_points(points, colors, sh_degree: int = 3) -> GaussianCloud:
    """Isotropic Gaussians at ``points`` whose DC color reproduces ``colors``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    colors = np.asarray(colors, dtype=float).reshape(-1, 3)
    m = points.shape[0]
    if m < 4:
        raise DegenerateCloud(f"need at least 4 points to initialize, got {m}")
    scale = nearest_neighbor_scales(points)
    coeffs = np.zeros((m, 3, sh.num_bases(sh_degree)))
    coeffs[:, :, 0] = (colors - 0.5) / sh.C0
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
    return GaussianCloud(
        points.copy(),
        rotations,
        np.repeat(np.log(scale)[:, None], 3, axis=1),
        np.full((m, 1), float(logit(INIT_OPACITY))),
        coeffs,
        active_sh_degree=0,
    )


def unproject(depth: DepthMap, intrinsics: Intrinsics, pose: Se3Pose, max_points: int,
              image: np.ndarray | None = None):
    """Lift a strided subset of valid depth pixels to world points.

    ``pose`` is world-to-camera. Returns ``(points, colors)``; colors come
    from ``image`` when given, otherwise mid-gray.
    """
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    flat = np.flatnonzero(depth.mask.reshape(-1))
    if flat.size == 0:
        raise NoValidDepth("depth map has no valid pixels")
    stride = int(np.ceil(flat.size / max_points))
    flat = flat[::stride]
    h, w = depth.shape
    v, u = np.divmod(flat, w)
    z = depth.values.reshape(-1)[flat]
    cam_pts = np.stack([(u - intrinsics.cx) / intrinsics.fx * z,
                        (v - intrinsics.cy) / intrinsics.fy * z, z], axis=-1)
    points = act(inverse(pose), cam_pts)
    if image is None:
        colors = np.full_like(points, 0.5)
    else:
        colors = np.asarray(image, dtype=float).reshape(-1, 3)[flat]
    return points, colors
