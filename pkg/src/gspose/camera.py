"""Pinhole camera model shared by the renderer and the point-cloud tools."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from gspose.lie import Se3Pose


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus a world-to-camera pose (OpenCV axes: x right, y down, z forward).

    Pixel ``(u, v)`` refers to column ``u``, row ``v``; its center sits at
    the integer coordinate.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: Se3Pose = field(default_factory=Se3Pose.identity)

    def __post_init__(self):
        Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    @classmethod
    def from_intrinsics(cls, intr: Intrinsics, world_to_cam: Se3Pose | None = None) -> "Camera":
        return cls(intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height,
                   world_to_cam if world_to_cam is not None else Se3Pose.identity())

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.world_to_cam.center

    def with_pose(self, world_to_cam: Se3Pose) -> "Camera":
        return replace(self, world_to_cam=world_to_cam)

    def to_dict(self) -> dict:
        out = self.intrinsics.to_dict()
        out["pose"] = self.world_to_cam.to_list()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        pose = Se3Pose.from_list(d["pose"]) if d.get("pose") is not None else Se3Pose.identity()
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), pose)


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Se3Pose:
    """World-to-camera pose of a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image; with y-down camera axes the default keeps world -y up.
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=float)
    right = np.cross(down, forward)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross([1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 1.0, 0.0], forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    cam_to_world = np.stack([right, down, forward], axis=1)
    rot = cam_to_world.T
    return Se3Pose(rot, -rot @ eye)
