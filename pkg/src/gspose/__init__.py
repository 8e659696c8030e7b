"""Differentiable Gaussian splatting with analytic SE(3) camera-pose gradients."""

import os

# numba's default TBB layer is often missing; OpenMP ships with the wheels
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from gspose.camera import Camera, Intrinsics, look_at  # noqa: E402
from gspose.lie import Se3Pose  # noqa: E402
from gspose.rasterizer import GradientBundle, RasterConfig, RenderOutput, backward, render  # noqa: E402
from gspose.scene import DepthMap, GaussianCloud  # noqa: E402

__all__ = [
    "Camera", "Intrinsics", "look_at", "Se3Pose", "GradientBundle", "RasterConfig",
    "RenderOutput", "backward", "render", "DepthMap", "GaussianCloud",
]
