"""Deterministic synthetic scenes rendered by this package's own rasterizer.

Gaussians fill a cube of half-size ``extent`` around the origin; cameras
look at the origin from ``radius`` away. Depth maps are alpha-blended view
depths normalized by accumulated opacity, valid where the scene covers at
least ``depth_min_alpha`` of the pixel.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gspose import rasterizer as rz
from gspose import sh
from gspose.camera import Camera, Intrinsics, look_at
from gspose.io import SceneBundle
from gspose.lie import Se3Pose
from gspose.scene import DepthMap, GaussianCloud, init_from_points, logit


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_gaussians: int = Field(500, ge=1)
    n_cameras: int = Field(20, ge=1)
    trajectory: Literal["orbit", "forward-facing", "random-walk"] = "orbit"
    width: int = Field(64, ge=8)
    height: int = Field(48, ge=8)
    extent: float = Field(1.0, gt=0)
    radius: float = Field(4.0, gt=0)
    arc_deg: float = Field(90.0, gt=0, le=360)
    elevation_deg: float = Field(15.0, ge=-80, le=80)
    scale_range: tuple[float, float] = (0.05, 0.15)
    max_anisotropy: float = Field(3.0, ge=1)
    opacity_range: tuple[float, float] = (0.6, 0.95)
    sh_degree: int = Field(0, ge=0, le=3)
    with_depth: bool = True
    depth_min_alpha: float = Field(0.5, gt=0, lt=1)
    init_points: int = Field(0, ge=0)
    init_noise: float = Field(0.02, ge=0)


def random_gaussians(spec: SynthSpec, rng: np.random.Generator) -> GaussianCloud:
    """SPD Gaussians with max/min scale ratio bounded by ``max_anisotropy``."""
    n = spec.n_gaussians
    means = rng.uniform(-spec.extent, spec.extent, (n, 3))
    base = np.exp(rng.uniform(*np.log(spec.scale_range), n))
    ratio = np.exp(rng.uniform(0, np.log(spec.max_anisotropy), (n, 3)))
    scales = base[:, None] * ratio / ratio.min(axis=1, keepdims=True)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    coeffs = np.zeros((n, 3, sh.num_bases(spec.sh_degree)))
    coeffs[:, :, 0] = (rng.uniform(0.05, 0.95, (n, 3)) - 0.5) / sh.C0
    if spec.sh_degree > 0:
        coeffs[:, :, 1:] = rng.normal(scale=0.1, size=coeffs[:, :, 1:].shape)
    opacity = rng.uniform(*spec.opacity_range, (n, 1))
    return GaussianCloud(means, q, np.log(scales), logit(opacity), coeffs)


def camera_poses(spec: SynthSpec, rng: np.random.Generator) -> list[Se3Pose]:
    """World-to-camera poses for the requested trajectory kind."""
    k = spec.n_cameras
    elev = np.radians(spec.elevation_deg)
    if spec.trajectory == "orbit":
        az = np.radians(np.linspace(-spec.arc_deg / 2, spec.arc_deg / 2, k)) if k > 1 else np.zeros(1)
        # y points down, so negative y is up
        eyes = spec.radius * np.stack([np.cos(elev) * np.sin(az), -np.sin(elev) * np.ones(k),
                                       -np.cos(elev) * np.cos(az)], axis=1)
        return [look_at(e, np.zeros(3)) for e in eyes]
    if spec.trajectory == "forward-facing":
        half = spec.radius * np.tan(np.radians(spec.arc_deg) / 8)
        offsets = rng.uniform(-half, half, (k, 2))
        rot = look_at(np.array([0.0, 0.0, -spec.radius]), np.zeros(3)).rotation
        return [Se3Pose(rot, -rot @ np.array([x, y, -spec.radius])) for x, y in offsets]
    # random walk: small steps on the sphere, always facing the origin
    step = np.radians(spec.arc_deg) / max(k, 1)
    direction = np.array([0.0, -np.sin(elev), -np.cos(elev)])
    poses = []
    for _ in range(k):
        poses.append(look_at(spec.radius * direction, np.zeros(3)))
        tangent = rng.normal(size=3)
        tangent -= tangent @ direction * direction
        direction = direction + step * tangent / np.linalg.norm(tangent)
        direction /= np.linalg.norm(direction)
    return poses


def default_intrinsics(spec: SynthSpec) -> Intrinsics:
    # the cube's bounding sphere fills about 80% of the narrower half-extent
    half_view = 1.25 * np.sqrt(3) * spec.extent / spec.radius
    f = min(spec.width, spec.height) / 2 / half_view
    return Intrinsics(f, f, (spec.width - 1) / 2, (spec.height - 1) / 2, spec.width, spec.height)


def render_depth(cloud: GaussianCloud, cam: Camera, min_alpha: float = 0.5,
                 config: rz.RasterConfig = rz.DEFAULT_RASTER) -> DepthMap:
    """Alpha-blended view depth, computed by rendering depth as a gray color."""
    z = cloud.means @ cam.world_to_cam.rotation[2] + cam.world_to_cam.translation[2]
    coeffs = np.zeros((len(cloud), 3, 1))
    coeffs[:, :, 0] = ((np.maximum(z, 0.0) - 0.5) / sh.C0)[:, None]
    depth_cloud = GaussianCloud(cloud.means, cloud.rotations, cloud.log_scales, cloud.opacity_logits, coeffs)
    out = rz.render(depth_cloud, cam, (0.0, 0.0, 0.0), config)
    accum = out.accum_transmittance
    valid = accum >= min_alpha
    values = np.where(valid, out.image[..., 0] / np.maximum(accum, 1e-12), 0.0)
    return DepthMap(values, valid)


def synth_scene(spec: SynthSpec = SynthSpec(), seed: int = 0,
                background=(0.0, 0.0, 0.0)) -> tuple[SceneBundle, GaussianCloud]:
    """Generate a scene bundle plus its ground-truth cloud. Bit-identical per seed."""
    rng = np.random.default_rng(seed)
    cloud = random_gaussians(spec, rng)
    poses = camera_poses(spec, rng)
    intr = default_intrinsics(spec)
    images, depths = [], []
    for pose in poses:
        cam = Camera.from_intrinsics(intr, pose)
        images.append(rz.render(cloud, cam, background).image)
        if spec.with_depth:
            depths.append(render_depth(cloud, cam, spec.depth_min_alpha))
    init = None
    if spec.init_points:
        idx = rng.choice(len(cloud), size=min(spec.init_points, len(cloud)), replace=False)
        pts = cloud.means[idx] + rng.normal(scale=spec.init_noise, size=(len(idx), 3))
        init = init_from_points(pts, np.full((len(idx), 3), 0.5), sh_degree=spec.sh_degree)
    bundle = SceneBundle(images, intr, poses, depths if spec.with_depth else None, init)
    return bundle, cloud
