"""SE(3) rigid transforms with a 6-vector tangent parametrization.

Tangent vectors are ordered ``(rho, omega)``: translation part in indices
0-2, axis-angle rotation part in 3-5. Perturbations are applied on the
left, ``Exp(v) @ T``, and every Jacobian in this module follows that
convention unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gspose.errors import AngleNearPi

SMALL_ANGLE = 1e-8
# log() switches to series expansions below this angle; the closed forms
# lose ~eps/theta^2 relative accuracy there.
_LOG_SERIES_ANGLE = 1e-4
_PI_MARGIN = 1e-6


def skew(v) -> np.ndarray:
    """Hat operator on R^3: ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (uses the antisymmetric part)."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def hat6(tau) -> np.ndarray:
    """4x4 se(3) matrix of a tangent 6-vector."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = skew(tau[3:])
    out[:3, 3] = tau[:3]
    return out


def vee6(m: np.ndarray) -> np.ndarray:
    return np.concatenate([m[:3, 3], vee(m[:3, :3])])


def _so3_coeffs(theta: float) -> tuple[float, float, float]:
    """Coefficients A, B, C of Rodrigues' formula and the V matrix.

    R = I + A K + B K^2 and V = I + B K + C K^2 with K = skew(omega).
    """
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = np.sin(theta)
    half = np.sin(0.5 * theta)
    a = s / theta
    b = 2.0 * half * half / (theta * theta)
    c = (theta - s) / theta**3
    return a, b, c


def so3_exp(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    a, b, _ = _so3_coeffs(theta)
    k = skew(omega)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_angle(rot: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix in radians, robust near 0 and pi."""
    sin_part = 0.5 * np.linalg.norm(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    cos_part = 0.5 * (np.trace(rot) - 1.0)
    return float(np.arctan2(sin_part, cos_part))


def so3_log(rot: np.ndarray) -> np.ndarray:
    theta = rotation_angle(rot)
    if theta >= np.pi - _PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi for a unique log")
    if theta < _LOG_SERIES_ANGLE:
        t2 = theta * theta
        scale = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
    else:
        scale = 0.5 * theta / np.sin(theta)
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return scale * w


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in Frobenius norm (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True)
class Se3Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Se3Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Se3Pose":
        """Parse the row-major 3x4 form (12 numbers) used in JSON files."""
        if len(values) != 12:
            raise ValueError(f"expected 12 numbers for a 3x4 pose, got {len(values)}")
        return cls.from_matrix(np.asarray(values, dtype=float).reshape(3, 4))

    def to_list(self) -> list[float]:
        return [float(x) for x in self.matrix()[:3].reshape(-1)]

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return compose(self, other)

    def inverse(self) -> "Se3Pose":
        return inverse(self)

    def act(self, p) -> np.ndarray:
        return act(self, p)

    @property
    def center(self) -> np.ndarray:
        """Origin of this frame expressed in the source frame, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    def orthonormalized(self) -> "Se3Pose":
        return Se3Pose(orthonormalize(self.rotation), self.translation)


def exp(tau) -> Se3Pose:
    tau = np.asarray(tau, dtype=float).reshape(6)
    rho, omega = tau[:3], tau[3:]
    theta = float(np.linalg.norm(omega))
    a, b, c = _so3_coeffs(theta)
    k = skew(omega)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Se3Pose(rot, v @ rho)


def log(pose: Se3Pose) -> np.ndarray:
    omega = so3_log(pose.rotation)
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _LOG_SERIES_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        # half-angle form; 1 - cos(theta) loses digits for small theta
        half = 0.5 * theta
        d = (1.0 - half / np.tan(half)) / (theta * theta)
    v_inv = np.eye(3) - 0.5 * k + d * (k @ k)
    return np.concatenate([v_inv @ pose.translation, omega])


def compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    return Se3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(pose: Se3Pose) -> Se3Pose:
    rt = pose.rotation.T
    return Se3Pose(rt, -rt @ pose.translation)


def act(pose: Se3Pose, p) -> np.ndarray:
    """Apply the transform to one point (3,) or a batch (N, 3)."""
    p = np.asarray(p, dtype=float)
    return p @ pose.rotation.T + pose.translation


def adjoint(pose: Se3Pose) -> np.ndarray:
    """6x6 adjoint, ``Exp(Ad_T v) = T Exp(v) T^-1``."""
    r, t = pose.rotation, pose.translation
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[:3, 3:] = skew(t) @ r
    out[3:, 3:] = r
    return out


def jac_point_wrt_pose(y_c) -> np.ndarray:
    """d(T x)/dT as a 3x6 matrix, given the transformed point ``y = T x``."""
    out = np.zeros((3, 6))
    out[:, :3] = np.eye(3)
    out[:, 3:] = -skew(y_c)
    return out


def jac_inverse(pose: Se3Pose, side: str = "left") -> np.ndarray:
    """Jacobian of the group inverse.

    With ``side="left"`` (the package convention) the result maps a left
    perturbation of ``T`` to the induced left perturbation of ``T^-1``,
    which is ``-Ad(T^-1)``. ``side="right"`` gives the body-frame form
    ``-[[R, [t]x R], [0, R]] = -Ad(T)``; both are the same block formula
    evaluated at ``T^-1`` and ``T`` respectively.
    """
    if side == "left":
        return -adjoint(inverse(pose))
    if side == "right":
        return -adjoint(pose)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


_E_SKEW = np.stack([skew(e) for e in np.eye(3)])


def jac_rotation_wrt_pose(rot: np.ndarray) -> np.ndarray:
    """Derivative of ``rot`` under ``Exp(v) @ T`` for each rotational coordinate.

    Returns a (3, 3, 3) stack whose i-th block is ``[e_i]x @ rot``; the
    translational coordinates do not move the rotation.
    """
    return _E_SKEW @ np.asarray(rot, dtype=float)


def left_perturb(pose: Se3Pose, tau) -> Se3Pose:
    return compose(exp(tau), pose)
