"""Real spherical harmonics up to degree 3 (3DGS constants and sign layout)."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def num_bases(degree: int) -> int:
    return (degree + 1) ** 2


def basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the basis at unit directions. ``dirs`` (N, 3) -> (N, (degree+1)^2)."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in 0..3, got {degree}")
    dirs = np.atleast_2d(dirs)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((dirs.shape[0], num_bases(degree)))
    out[:, 0] = C0
    if degree >= 1:
        out[:, 1] = -C1 * y
        out[:, 2] = C1 * z
        out[:, 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = C2[0] * x * y
        out[:, 5] = C2[1] * y * z
        out[:, 6] = C2[2] * (2 * zz - xx - yy)
        out[:, 7] = C2[3] * x * z
        out[:, 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = C3[0] * y * (3 * xx - yy)
        out[:, 10] = C3[1] * x * y * z
        out[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = C3[5] * z * (xx - yy)
        out[:, 15] = C3[6] * x * (xx - 3 * yy)
    return out


def basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d dir, treating the polynomial in (x, y, z) as-is. Shape (N, B, 3)."""
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g = np.zeros((n, num_bases(degree), 3))
    if degree >= 1:
        g[:, 1, 1] = -C1
        g[:, 2, 2] = C1
        g[:, 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 4] = np.stack([C2[0] * y, C2[0] * x, 0 * x], -1)
        g[:, 5] = np.stack([0 * x, C2[1] * z, C2[1] * y], -1)
        g[:, 6] = np.stack([-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z], -1)
        g[:, 7] = np.stack([C2[3] * z, 0 * x, C2[3] * x], -1)
        g[:, 8] = np.stack([2 * C2[4] * x, -2 * C2[4] * y, 0 * x], -1)
    if degree >= 3:
        g[:, 9] = np.stack([6 * C3[0] * x * y, C3[0] * (3 * xx - 3 * yy), 0 * x], -1)
        g[:, 10] = np.stack([C3[1] * y * z, C3[1] * x * z, C3[1] * x * y], -1)
        g[:, 11] = np.stack(
            [-2 * C3[2] * x * y, C3[2] * (4 * zz - xx - 3 * yy), 8 * C3[2] * y * z], -1
        )
        g[:, 12] = np.stack(
            [-6 * C3[3] * x * z, -6 * C3[3] * y * z, C3[3] * (6 * zz - 3 * xx - 3 * yy)], -1
        )
        g[:, 13] = np.stack(
            [C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * x * y, 8 * C3[4] * x * z], -1
        )
        g[:, 14] = np.stack([2 * C3[5] * x * z, -2 * C3[5] * y * z, C3[5] * (xx - yy)], -1)
        g[:, 15] = np.stack([C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * x * y, 0 * x], -1)
    return g


def eval_colors(coeffs: np.ndarray, dirs: np.ndarray, degree: int):
    """Batched colors for (N, 3, B) coefficients at unit directions (N, 3).

    Returns ``(rgb, raw)`` where ``raw`` is the value before the +0.5 offset
    and zero clamp; callers need it to mask the clamp in the backward pass.
    """
    nb = num_bases(degree)
    if coeffs.shape[-1] < nb:
        raise ValueError(f"need {nb} SH coefficients for degree {degree}, got {coeffs.shape[-1]}")
    y = basis(dirs, degree)
    raw = np.einsum("ncb,nb->nc", coeffs[..., :nb], y)
    return np.maximum(raw + 0.5, 0.0), raw


def sh_eval(coeffs, direction, degree: int) -> np.ndarray:
    """Color of one splat: ``coeffs`` (3, B), unit ``direction`` (3,)."""
    coeffs = np.asarray(coeffs, dtype=float)
    rgb, _ = eval_colors(coeffs[None], np.asarray(direction, dtype=float)[None], degree)
    return rgb[0]


def sh_dir_gradient(coeffs, direction, degree: int) -> np.ndarray:
    """d rgb / d v for ``rgb = sh_eval(coeffs, v / |v|)``; v need not be unit.

    Channels clamped at zero get zero rows.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    v = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(v)
    d = v / norm
    nb = num_bases(degree)
    _, raw = eval_colors(coeffs[None], d[None], degree)
    d_rgb_d_dir = coeffs[:, :nb] @ basis_grad(d[None], degree)[0]
    d_rgb_d_dir[raw[0] + 0.5 < 0] = 0.0
    normalize_jac = (np.eye(3) - np.outer(d, d)) / norm
    return d_rgb_d_dir @ normalize_jac
