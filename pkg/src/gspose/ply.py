"""Binary little-endian PLY in the layout used by the reference 3DGS code.

Vertex properties, in order: x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity
scale_0..2 rot_0..3, all float32. Scales are logs, opacity is a logit and
``f_rest`` is channel-major (all red coefficients first). Reading accepts any
property order and numeric type, and tolerates missing normals.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from gspose.errors import CorruptFile
from gspose.scene import GaussianCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

N_REST = 45


def _property_names() -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(N_REST)]
    names += ["opacity"] + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]
    return names


def write_ply(path, cloud: GaussianCloud) -> None:
    n = len(cloud)
    names = _property_names()
    data = np.zeros((n, len(names)), dtype="<f4")
    col = {name: i for i, name in enumerate(names)}
    data[:, 0:3] = cloud.means
    data[:, col["f_dc_0"]:col["f_dc_0"] + 3] = cloud.sh_coeffs[:, :, 0]
    rest = np.zeros((n, 3, N_REST // 3))
    b = cloud.sh_coeffs.shape[2]
    rest[:, :, : b - 1] = cloud.sh_coeffs[:, :, 1:]
    data[:, col["f_rest_0"]:col["f_rest_0"] + N_REST] = rest.reshape(n, N_REST)
    data[:, col["opacity"]] = cloud.opacity_logits[:, 0]
    data[:, col["scale_0"]:col["scale_0"] + 3] = cloud.log_scales
    data[:, col["rot_0"]:col["rot_0"] + 4] = cloud.rotations
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def _parse_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise CorruptFile("not a PLY file", path)
    fmt = None
    vertex_count = None
    props: list[tuple[str, str]] = []
    element = None
    while True:
        line = fh.readline()
        if not line:
            raise CorruptFile("unterminated PLY header", path)
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            element = tokens[1]
            if element == "vertex":
                vertex_count = int(tokens[2])
            elif vertex_count is None:
                raise CorruptFile(f"unsupported element {element!r} before vertex", path)
        elif tokens[0] == "property" and element == "vertex":
            if tokens[1] == "list":
                raise CorruptFile("list properties are not supported on vertices", path)
            if tokens[1] not in _PLY_TYPES:
                raise CorruptFile(f"unknown property type {tokens[1]!r}", path)
            props.append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt != "binary_little_endian":
        raise CorruptFile(f"only binary_little_endian PLY is supported, got {fmt!r}", path)
    if vertex_count is None:
        raise CorruptFile("PLY has no vertex element", path)
    return vertex_count, props


def read_ply(path) -> GaussianCloud:
    path = Path(path)
    with open(path, "rb") as fh:
        n, props = _parse_header(fh, path)
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        raw = fh.read(n * dtype.itemsize)
    if len(raw) != n * dtype.itemsize:
        raise CorruptFile(f"expected {n} vertices, file is truncated", path)
    v = np.frombuffer(raw, dtype=dtype)
    names = set(dtype.names)

    def cols(prefix, count):
        missing = [f"{prefix}{i}" for i in range(count) if f"{prefix}{i}" not in names]
        if missing:
            raise CorruptFile(f"missing properties {missing}", path)
        return np.stack([v[f"{prefix}{i}"].astype(float) for i in range(count)], axis=-1)

    for key in ("x", "y", "z", "opacity"):
        if key not in names:
            raise CorruptFile(f"missing property {key!r}", path)
    means = np.stack([v["x"], v["y"], v["z"]], axis=-1).astype(float)
    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest % 3:
        raise CorruptFile(f"f_rest count {n_rest} is not a multiple of 3", path)
    b = n_rest // 3 + 1
    if b not in (1, 4, 9, 16):
        raise CorruptFile(f"f_rest count {n_rest} does not match an SH degree", path)
    coeffs = np.zeros((n, 3, b))
    coeffs[:, :, 0] = cols("f_dc_", 3)
    if n_rest:
        coeffs[:, :, 1:] = cols("f_rest_", n_rest).reshape(n, 3, b - 1)
    cloud = GaussianCloud(means, cols("rot_", 4), cols("scale_", 3),
                          v["opacity"].astype(float)[:, None], coeffs)
    if not cloud.is_finite():
        raise CorruptFile("non-finite values in Gaussian parameters", path)
    return cloud
