"""Tile-based Gaussian splatting renderer with an exact analytic backward pass.

The backward pass returns gradients for every cloud parameter (through the
log-scale, logit and quaternion-normalization activations) and for the
camera's world-to-camera pose as a left-perturbation tangent 6-vector
``(rho, omega)``, matching :mod:`gspose.lie`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gspose import _kernels, sh
from gspose.camera import Camera
from gspose.errors import DimensionMismatch, StateMismatch
from gspose.scene import GaussianCloud, quat_to_rotmat, quat_to_rotmat_vjp


class RasterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tile_size: int = Field(16, ge=1)
    cutoff_sigma: float = Field(3.0, gt=0)
    alpha_max: float = Field(0.99, gt=0, lt=1)
    dilation: float = Field(0.3, ge=0)
    min_transmittance: float = Field(1e-4, gt=0, lt=1)
    z_near: float = Field(0.01, gt=0)
    mode: Literal["deterministic", "fast"] = "deterministic"


DEFAULT_RASTER = RasterConfig()


def project(mu, cam: Camera):
    """Pixel position and view depth of a world point. Depth <= z_near means culled."""
    mu_c = cam.world_to_cam.act(np.asarray(mu, dtype=float))
    x, y, z = mu_c
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]), float(z)


def projection_jacobian(mu_c: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """d(pixel)/d(camera point) for one point (2x3) or a batch (N, 2, 3)."""
    mu_c = np.asarray(mu_c, dtype=float)
    x, y, z = mu_c[..., 0], mu_c[..., 1], mu_c[..., 2]
    jac = np.zeros(mu_c.shape[:-1] + (2, 3))
    jac[..., 0, 0] = fx / z
    jac[..., 0, 2] = -fx * x / (z * z)
    jac[..., 1, 1] = fy / z
    jac[..., 1, 2] = -fy * y / (z * z)
    return jac


def covariance2d(sigma3d, mu_c, cam: Camera, dilation: float = DEFAULT_RASTER.dilation) -> np.ndarray:
    """Screen-space covariance ``J R Sigma R^T J^T`` plus the low-pass dilation."""
    jac = projection_jacobian(mu_c, cam.fx, cam.fy)
    m = jac @ cam.world_to_cam.rotation
    return m @ np.asarray(sigma3d, dtype=float) @ m.T + dilation * np.eye(2)


def splat_alpha(mu2d, inv_cov2d, opacity, pixel, config: RasterConfig = DEFAULT_RASTER) -> float:
    d = np.asarray(pixel, dtype=float) - np.asarray(mu2d, dtype=float)
    q = float(d @ np.asarray(inv_cov2d, dtype=float) @ d)
    if q > config.cutoff_sigma**2:
        return 0.0
    return min(config.alpha_max, float(opacity) * float(np.exp(-0.5 * q)))


@dataclass
class _SplatState:
    """Per-visible-splat quantities cached by the forward pass."""

    index: np.ndarray
    mu_c: np.ndarray
    jac: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    rot_q: np.ndarray
    unit_q: np.ndarray
    q_norm: np.ndarray
    scales: np.ndarray
    conic: np.ndarray
    mean2d: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    color_raw: np.ndarray
    view_dir: np.ndarray
    view_dist: np.ndarray


@dataclass
class RenderOutput:
    image: np.ndarray
    accum_transmittance: np.ndarray
    final_transmittance: np.ndarray
    n_contrib: np.ndarray
    entries: np.ndarray
    tile_start: np.ndarray
    depth_order: np.ndarray
    splats: _SplatState
    background: np.ndarray
    config: RasterConfig
    fingerprint: int

    @property
    def visible(self) -> np.ndarray:
        """Indices into the cloud of splats that survived culling."""
        return self.splats.index


@dataclass
class GradientBundle:
    d_means: np.ndarray
    d_rotations: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_sh: np.ndarray
    d_pose: np.ndarray
    d_mean2d: np.ndarray

    @classmethod
    def zeros(cls, cloud: GaussianCloud) -> "GradientBundle":
        n = len(cloud)
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros((n, 1)),
                   np.zeros_like(cloud.sh_coeffs), np.zeros(6), np.zeros((n, 2)))

    def param_grads(self) -> dict[str, np.ndarray]:
        return {
            "means": self.d_means,
            "rotations": self.d_rotations,
            "log_scales": self.d_log_scales,
            "opacity_logits": self.d_opacity_logits,
            "sh_coeffs": self.d_sh,
        }

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.param_grads().values()) and bool(
            np.all(np.isfinite(self.d_pose)))


def _fingerprint(cloud: GaussianCloud, cam: Camera, background: np.ndarray) -> int:
    crc = 0
    for arr in cloud.param_arrays().values():
        crc = zlib.crc32(np.ascontiguousarray(arr).view(np.uint8), crc)
    crc = zlib.crc32(np.asarray([cloud.active_sh_degree], dtype=np.int64).view(np.uint8), crc)
    cam_vals = np.r_[cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                     cam.world_to_cam.matrix().ravel(), background]
    return zlib.crc32(cam_vals.view(np.uint8), crc)


def _preprocess(cloud: GaussianCloud, cam: Camera, cfg: RasterConfig) -> tuple[_SplatState, np.ndarray, np.ndarray]:
    rot_c = cam.world_to_cam.rotation
    mu_c_all = cloud.means @ rot_c.T + cam.world_to_cam.translation
    front = np.flatnonzero(mu_c_all[:, 2] > cfg.z_near)
    mu_c = mu_c_all[front]

    q = cloud.rotations[front]
    q_norm = np.linalg.norm(q, axis=1)
    unit_q = q / q_norm[:, None]
    rot_q = quat_to_rotmat(unit_q)
    scales = np.exp(cloud.log_scales[front])
    half = rot_q * scales[:, None, :]
    sigma = half @ np.swapaxes(half, 1, 2)

    jac = projection_jacobian(mu_c, cam.fx, cam.fy)
    m = jac @ rot_c
    cov2 = m @ sigma @ np.swapaxes(m, 1, 2)
    cov2[:, 0, 0] += cfg.dilation
    cov2[:, 1, 1] += cfg.dilation
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
    conic = np.stack([cov2[:, 1, 1], -0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0]), cov2[:, 0, 0]], -1) / det[:, None]

    z = mu_c[:, 2]
    mean2d = np.stack([cam.fx * mu_c[:, 0] / z + cam.cx, cam.fy * mu_c[:, 1] / z + cam.cy], -1)
    ext_x = cfg.cutoff_sigma * np.sqrt(cov2[:, 0, 0])
    ext_y = cfg.cutoff_sigma * np.sqrt(cov2[:, 1, 1])
    x0 = np.maximum(np.ceil(mean2d[:, 0] - ext_x), 0)
    x1 = np.minimum(np.floor(mean2d[:, 0] + ext_x), cam.width - 1)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - ext_y), 0)
    y1 = np.minimum(np.floor(mean2d[:, 1] + ext_y), cam.height - 1)
    on_screen = (x0 <= x1) & (y0 <= y1) & np.all(np.isfinite(mean2d), axis=1)

    keep = np.flatnonzero(on_screen)
    ts = cfg.tile_size
    rect = np.stack([x0[keep] // ts, y0[keep] // ts, x1[keep] // ts + 1, y1[keep] // ts + 1], -1).astype(np.int64)

    index = front[keep]
    diff = cloud.means[index] - cam.center
    dist = np.linalg.norm(diff, axis=1)
    view_dir = diff / dist[:, None]
    color, color_raw = sh.eval_colors(cloud.sh_coeffs[index], view_dir, cloud.active_sh_degree)
    state = _SplatState(
        index=index, mu_c=mu_c[keep], jac=jac[keep], m=m[keep], sigma=sigma[keep],
        rot_q=rot_q[keep], unit_q=unit_q[keep], q_norm=q_norm[keep], scales=scales[keep],
        conic=np.ascontiguousarray(conic[keep]), mean2d=np.ascontiguousarray(mean2d[keep]),
        opacity=1.0 / (1.0 + np.exp(-cloud.opacity_logits[index, 0])),
        color=np.ascontiguousarray(color), color_raw=color_raw, view_dir=view_dir, view_dist=dist,
    )
    order = np.argsort(z[keep], kind="stable")
    return state, rect, order


def _gather(st: _SplatState, entries: np.ndarray):
    return st.mean2d[entries], st.conic[entries], st.opacity[entries], st.color[entries]


def render(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0),
           config: RasterConfig = DEFAULT_RASTER) -> RenderOutput:
    bg = np.asarray(background, dtype=float).reshape(3)
    state, rect, order = _preprocess(cloud, cam, config)
    ts = config.tile_size
    n_tiles = ((cam.height + ts - 1) // ts, (cam.width + ts - 1) // ts)
    entries, tile_start = _kernels.bin_splats(order, rect, n_tiles)
    image, accum, final_t, n_contrib = _kernels.composite(
        tile_start, *_gather(state, entries), bg,
        cam.width, cam.height, ts, config.cutoff_sigma**2, config.alpha_max,
        config.min_transmittance)
    return RenderOutput(image, accum, final_t, n_contrib, entries, tile_start, order, state, bg,
                        config, _fingerprint(cloud, cam, bg))


def backward(cloud: GaussianCloud, cam: Camera, out: RenderOutput, d_image) -> GradientBundle:
    """Gradients of ``sum(d_image * out.image)`` w.r.t. the cloud and the camera pose."""
    if _fingerprint(cloud, cam, out.background) != out.fingerprint:
        raise StateMismatch("render output does not correspond to this cloud and camera")
    d_image = np.ascontiguousarray(d_image, dtype=float)
    if d_image.shape != out.image.shape:
        raise DimensionMismatch(f"d_image shape {d_image.shape} != image shape {out.image.shape}")
    cfg = out.config
    st = out.splats
    n_vis = st.index.shape[0]
    args = (out.entries, out.tile_start, *_gather(st, out.entries), out.background, out.final_transmittance, out.n_contrib, d_image,
            cam.width, cam.height, cfg.tile_size, cfg.cutoff_sigma**2, cfg.alpha_max)
    if cfg.mode == "deterministic":
        per_entry = _kernels.replay_per_entry(*args)
        partial = _kernels.reduce_entries(out.entries, per_entry, n_vis)
    else:
        partial = _kernels.replay_direct(*args, n_vis)

    grads = GradientBundle.zeros(cloud)
    if n_vis == 0:
        return grads
    g_mean2d = partial[:, 0:2]
    g_conic = partial[:, 2:5]
    g_opacity = partial[:, 5]
    g_color = partial[:, 6:9].copy()

    rot_c = cam.world_to_cam.rotation
    fx, fy = cam.fx, cam.fy
    x, y, z = st.mu_c[:, 0], st.mu_c[:, 1], st.mu_c[:, 2]

    # conic -> screen covariance; conic b multiplies both off-diagonal entries
    gq = np.empty((n_vis, 2, 2))
    gq[:, 0, 0] = g_conic[:, 0]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * g_conic[:, 1]
    gq[:, 1, 1] = g_conic[:, 2]
    qmat = np.empty((n_vis, 2, 2))
    qmat[:, 0, 0] = st.conic[:, 0]
    qmat[:, 0, 1] = qmat[:, 1, 0] = st.conic[:, 1]
    qmat[:, 1, 1] = st.conic[:, 2]
    g_cov2 = -qmat @ gq @ qmat

    # cov2 = M Sigma M^T with M = J R_c
    g_m = 2.0 * g_cov2 @ st.m @ st.sigma
    g_sigma = np.swapaxes(st.m, 1, 2) @ g_cov2 @ st.m
    g_jac = g_m @ rot_c.T
    g_rot_c = np.einsum("nji,njk->ik", st.jac, g_m)

    g_mu_c = np.zeros((n_vis, 3))
    z2 = z * z
    z3 = z2 * z
    g_mu_c[:, 0] = g_mean2d[:, 0] * fx / z - g_jac[:, 0, 2] * fx / z2
    g_mu_c[:, 1] = g_mean2d[:, 1] * fy / z - g_jac[:, 1, 2] * fy / z2
    g_mu_c[:, 2] = (-g_mean2d[:, 0] * fx * x / z2 - g_mean2d[:, 1] * fy * y / z2
                    - g_jac[:, 0, 0] * fx / z2 + g_jac[:, 0, 2] * 2 * fx * x / z3
                    - g_jac[:, 1, 1] * fy / z2 + g_jac[:, 1, 2] * 2 * fy * y / z3)

    # Sigma = L L^T with L = R(q) diag(s)
    half = st.rot_q * st.scales[:, None, :]
    g_half = 2.0 * g_sigma @ half
    g_rot_q = g_half * st.scales[:, None, :]
    g_scales = np.einsum("nrj,nrj->nj", g_half, st.rot_q)
    g_unit_q = quat_to_rotmat_vjp(st.unit_q, g_rot_q)
    g_q = (g_unit_q - st.unit_q * np.sum(st.unit_q * g_unit_q, axis=1, keepdims=True)) / st.q_norm[:, None]

    # view-dependent color
    degree = cloud.active_sh_degree
    nb = sh.num_bases(degree)
    g_color[st.color_raw + 0.5 < 0] = 0.0
    basis = sh.basis(st.view_dir, degree)
    g_sh_vis = np.zeros((n_vis, 3, cloud.sh_coeffs.shape[2]))
    g_sh_vis[:, :, :nb] = g_color[:, :, None] * basis[:, None, :]
    g_means = g_mu_c @ rot_c
    if degree > 0:
        dbasis = sh.basis_grad(st.view_dir, degree)
        g_dir = np.einsum("nc,ncb,nbk->nk", g_color, cloud.sh_coeffs[st.index][:, :, :nb], dbasis)
        g_v = (g_dir - st.view_dir * np.sum(st.view_dir * g_dir, axis=1, keepdims=True)) / st.view_dist[:, None]
        g_means += g_v
        g_center = -g_v.sum(axis=0)
    else:
        g_center = np.zeros(3)

    # pose tangent (rho, omega) under left perturbation of world_to_cam
    g_rho = g_mu_c.sum(axis=0) - rot_c @ g_center
    a = g_rot_c @ rot_c.T
    g_omega = np.cross(st.mu_c, g_mu_c).sum(axis=0) + np.array(
        [a[2, 1] - a[1, 2], a[0, 2] - a[2, 0], a[1, 0] - a[0, 1]])

    idx = st.index
    grads.d_means[idx] = g_means
    grads.d_rotations[idx] = g_q
    grads.d_log_scales[idx] = g_scales * st.scales
    grads.d_opacity_logits[idx, 0] = g_opacity * st.opacity * (1.0 - st.opacity)
    grads.d_sh[idx] = g_sh_vis
    grads.d_pose = np.concatenate([g_rho, g_omega])
    grads.d_mean2d[idx] = g_mean2d
    return grads
