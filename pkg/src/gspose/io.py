"""Scene directories on disk.

Layout::

    scene/
      cameras.json     {fx, fy, cx, cy, width, height, frames: [{file, pose?, depth?}]}
      images/*.png     8-bit RGB
      depth/*.depth    text header line "GSDEPTH <width> <height> <scale>" + float32 LE
      init_cloud.ply   optional initial Gaussians

Poses are world-to-camera, 12 numbers of the row-major 3 x 4 matrix.
A depth value of 0 marks an invalid pixel; stored values are multiplied by
``scale`` on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from gspose.camera import Intrinsics
from gspose.errors import CorruptFile, ImageSizeMismatch, MissingIntrinsics
from gspose.lie import Se3Pose
from gspose.ply import read_ply, write_ply
from gspose.scene import DepthMap, GaussianCloud

DEPTH_MAGIC = "GSDEPTH"


@dataclass
class SceneBundle:
    images: list[np.ndarray]
    intrinsics: Intrinsics
    poses: list[Se3Pose] | None = None
    depths: list[DepthMap] | None = None
    init_cloud: GaussianCloud | None = None
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.images:
            raise ValueError("scene has no images")
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for i, im in enumerate(self.images):
            if im.shape != shape:
                raise ImageSizeMismatch(f"image {i} has shape {im.shape}, expected {shape}",
                                        self.names[i] if i < len(self.names) else None)
        if self.poses is not None and len(self.poses) != len(self.images):
            raise ValueError(f"{len(self.poses)} poses for {len(self.images)} images")
        if self.depths is not None and len(self.depths) != len(self.images):
            raise ValueError(f"{len(self.depths)} depth maps for {len(self.images)} images")
        if not self.names:
            self.names = [f"{i:04d}.png" for i in range(len(self.images))]

    @property
    def poses_known(self) -> bool:
        return self.poses is not None

    def initial_poses(self) -> list[Se3Pose]:
        """Ground-truth poses when present, identity otherwise."""
        return list(self.poses) if self.poses is not None else [Se3Pose.identity()] * len(self.images)


def write_depth(path, depth: DepthMap, scale: float = 1.0):
    values = np.where(depth.mask, depth.values / scale, 0.0).astype("<f4")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"{DEPTH_MAGIC} {w} {h} {scale!r}\n".encode("ascii"))
        fh.write(values.tobytes())


def read_depth(path) -> DepthMap:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            parts = fh.readline().decode("ascii").split()
            raw = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"unreadable depth file ({exc})", path) from exc
    if len(parts) != 4 or parts[0] != DEPTH_MAGIC:
        raise CorruptFile("bad depth header", path)
    try:
        w, h, scale = int(parts[1]), int(parts[2]), float(parts[3])
    except ValueError as exc:
        raise CorruptFile("bad depth header", path) from exc
    if len(raw) != 4 * w * h:
        raise CorruptFile(f"expected {4 * w * h} bytes of depth, found {len(raw)}", path)
    values = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(float) * scale
    return DepthMap(values)


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=float) * 255), 0, 255).astype(np.uint8)


def write_image(path, image):
    Image.fromarray(to_uint8(image)).save(path)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=float) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise CorruptFile(f"cannot decode image ({exc})", path) from exc


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"invalid JSON ({exc})", path) from exc


def load_intrinsics(meta: dict, path) -> Intrinsics:
    missing = [k for k in ("fx", "fy", "cx", "cy", "width", "height") if k not in meta]
    if missing:
        raise MissingIntrinsics(f"missing keys {missing}", path)
    try:
        return Intrinsics(float(meta["fx"]), float(meta["fy"]), float(meta["cx"]), float(meta["cy"]),
                          int(meta["width"]), int(meta["height"]))
    except (TypeError, ValueError) as exc:
        raise MissingIntrinsics(str(exc), path) from exc


def load_scene(path) -> SceneBundle:
    root = Path(path)
    cam_path = root / "cameras.json"
    if not cam_path.is_file():
        raise MissingIntrinsics("cameras.json not found", cam_path)
    meta = _load_json(cam_path)
    intr = load_intrinsics(meta, cam_path)
    frames = meta.get("frames")
    if not isinstance(frames, list) or not frames:
        raise CorruptFile("cameras.json has no frames", cam_path)

    images, names, poses, depths = [], [], [], []
    for frame in frames:
        img_path = root / "images" / frame["file"]
        if not img_path.is_file():
            raise CorruptFile("image file not found", img_path)
        img = read_image(img_path)
        if img.shape != (intr.height, intr.width, 3):
            raise ImageSizeMismatch(f"size {img.shape[1]}x{img.shape[0]} differs from cameras.json "
                                    f"{intr.width}x{intr.height}", img_path)
        images.append(img)
        names.append(frame["file"])
        try:
            poses.append(Se3Pose.from_list(frame["pose"]) if frame.get("pose") is not None else None)
        except ValueError as exc:
            raise CorruptFile(f"bad pose for {frame['file']} ({exc})", cam_path) from exc
        if frame.get("depth") is not None:
            depth = read_depth(root / "depth" / frame["depth"])
            if depth.shape != (intr.height, intr.width):
                raise ImageSizeMismatch(f"depth size {depth.shape} differs from image size", root / "depth" / frame["depth"])
            depths.append(depth)
        else:
            depths.append(None)

    have_poses = [p is not None for p in poses]
    if any(have_poses) and not all(have_poses):
        raise CorruptFile("either every frame or no frame must carry a pose", cam_path)
    have_depth = [d is not None for d in depths]
    if any(have_depth) and not all(have_depth):
        raise CorruptFile("either every frame or no frame must carry a depth map", cam_path)
    cloud_path = root / "init_cloud.ply"
    init_cloud = read_ply(cloud_path) if cloud_path.is_file() else None
    return SceneBundle(images, intr, poses if all(have_poses) else None,
                       depths if all(have_depth) else None, init_cloud, names)


def save_scene(path, bundle: SceneBundle):
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (img, name) in enumerate(zip(bundle.images, bundle.names)):
        write_image(root / "images" / name, img)
        frame: dict = {"file": name}
        if bundle.poses is not None:
            frame["pose"] = bundle.poses[i].to_list()
        if bundle.depths is not None:
            (root / "depth").mkdir(exist_ok=True)
            depth_name = Path(name).stem + ".depth"
            write_depth(root / "depth" / depth_name, bundle.depths[i])
            frame["depth"] = depth_name
        frames.append(frame)
    meta = bundle.intrinsics.to_dict()
    meta["frames"] = frames
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))
    if bundle.init_cloud is not None:
        write_ply(root / "init_cloud.ply", bundle.init_cloud)


def save_trajectory(path, poses: Sequence[Se3Pose]):
    Path(path).write_text(json.dumps([p.to_list() for p in poses], indent=1))


def load_trajectory(path) -> list[Se3Pose]:
    path = Path(path)
    data = _load_json(path)
    if isinstance(data, dict):
        data = [f["pose"] for f in data.get("frames", [])]
    try:
        return [Se3Pose.from_list(v) for v in data]
    except (TypeError, ValueError) as exc:
        raise CorruptFile(f"bad trajectory ({exc})", path) from exc
