"""Readers and writers for flow, depth, pose and intrinsics files.

All binary formats are little-endian.

* ``.flo`` -- Middlebury optical flow: float32 magic ``202021.25``, int32
  width, int32 height, then row-major interleaved float32 ``(u, v)``.
  Components with magnitude above 1e9 mark unknown flow.
* ``.png`` -- 16-bit grayscale depth, metres = value / 256, 0 = no data.
* ``.depth`` -- float depth: 8-byte magic ``DEPTHF32``, int32 width, int32
  height, row-major float32. Values <= 0 (or NaN) carry no data.
* pose text -- one frame per line, 12 floats: the row-major 3x4
  world-from-camera matrix ``[R | c]``.
* intrinsics text -- ``fx fy cx cy`` (optionally followed by ``width
  height``), or the nine entries of ``K``.
"""

from __future__ import annotations

import logging
import os
import struct

import numpy as np
from PIL import Image

from .errors import (
    BadHeader,
    BadLine,
    BadMagic,
    DimensionOverflow,
    NonRigidRotation,
    TrailingData,
    TruncatedFile,
    UnknownExtension,
)
from .fusion import FrameSequence
from .geometry import FlowField, Intrinsics, RelativePose

log = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e9
DEPTH_MAGIC = b"DEPTHF32"
PNG_DEPTH_SCALE = 256.0
MAX_SIDE = 32768

ORTHO_REJECT = 1e-3
ORTHO_REPAIR = 1e-6


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _check_size(width, height, path):
    if width <= 0 or height <= 0:
        raise BadHeader(f"{path}: non-positive size {width}x{height}")
    if width > MAX_SIDE or height > MAX_SIDE:
        raise DimensionOverflow(f"{path}: size {width}x{height} exceeds {MAX_SIDE}")


def _payload(data, offset, count, path):
    need = offset + 4 * count
    if len(data) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(data)}")
    if len(data) > need:
        raise TrailingData(f"{path}: {len(data) - need} unexpected trailing bytes")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset)


# flow


def read_flow(path):
    data = _read_bytes(path)
    if len(data) < 4:
        raise TruncatedFile(f"{path}: missing header")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != FLO_MAGIC:
        raise BadMagic(f"{path}: bad .flo magic {magic!r}")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: missing header")
    width, height = struct.unpack("<ii", data[4:12])
    _check_size(width, height, path)
    uv = _payload(data, 12, 2 * width * height, path).astype(np.float64).reshape(height, width, 2)
    valid = np.all(np.isfinite(uv), axis=2) & np.all(np.abs(uv) <= FLO_UNKNOWN, axis=2)
    return FlowField(uv, valid)


def write_flow(path, flow):
    if isinstance(flow, FlowField):
        uv = flow.flow.astype("<f4")
        uv[~flow.valid] = 1e10
    else:
        uv = np.asarray(flow, dtype="<f4")
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {uv.shape}")
    height, width = uv.shape[:2]
    _check_size(width, height, path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, width, height))
        fh.write(np.ascontiguousarray(uv).tobytes())


# depth


def _extension(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in (".png", ".depth"):
        raise UnknownExtension(f"{path}: unsupported depth extension {ext!r} (use .png or .depth)")
    return ext


def read_depth(path):
    """Depth map in metres as float64; pixels without data are 0 (PNG) or
    whatever non-positive value was stored (float format)."""
    if _extension(path) == ".png":
        try:
            img = Image.open(path)
            img.load()
        except (OSError, SyntaxError) as exc:
            raise BadHeader(f"{path}: cannot decode PNG ({exc})") from None
        if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise BadHeader(f"{path}: expected a 16-bit grayscale PNG, got mode {img.mode}")
        arr = np.array(img).astype(np.float64)
        return arr / PNG_DEPTH_SCALE
    data = _read_bytes(path)
    if len(data) < 16:
        raise TruncatedFile(f"{path}: missing header")
    if data[:8] != DEPTH_MAGIC:
        raise BadMagic(f"{path}: bad depth magic {data[:8]!r}")
    width, height = struct.unpack("<ii", data[8:16])
    _check_size(width, height, path)
    return _payload(data, 16, width * height, path).astype(np.float64).reshape(height, width)


def write_depth(path, depth):
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth map must be 2-D")
    height, width = depth.shape
    _check_size(width, height, path)
    if _extension(path) == ".png":
        valid = np.isfinite(depth) & (depth > 0)
        q = np.round(np.where(valid, depth, 0.0) * PNG_DEPTH_SCALE)
        if np.any(q > 65535):
            log.warning("%s: depths above %.2f m clipped", path, 65535 / PNG_DEPTH_SCALE)
        # positive depths never round to the "no data" code
        q = np.where(valid, np.clip(q, 1, 65535), 0).astype(np.uint16)
        Image.fromarray(q).save(path)
        return
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<ii", width, height))
        fh.write(depth.astype("<f4").tobytes())


# poses


def _check_rotation(R, line_no):
    dev = float(np.max(np.abs(R.T @ R - np.eye(3))))
    if dev > ORTHO_REJECT or np.linalg.det(R) <= 0:
        raise NonRigidRotation(f"line {line_no}: rotation is not rigid (deviation {dev:.2e})")
    if dev > ORTHO_REPAIR:
        log.warning("line %d: re-orthonormalising rotation (deviation %.2e)", line_no, dev)
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
    return R


def parse_poses(text, source="<poses>"):
    rotations, centers = [], []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals = np.array([float(s) for s in line.split()])
        except ValueError:
            raise BadLine(line_no, f"{source} line {line_no}: non-numeric entry") from None
        if vals.size != 12 or not np.all(np.isfinite(vals)):
            raise BadLine(line_no, f"{source} line {line_no}: expected 12 finite numbers, got {vals.size}")
        M = vals.reshape(3, 4)
        rotations.append(_check_rotation(M[:, :3], line_no))
        centers.append(M[:, 3])
    if not centers:
        raise BadLine(0, f"{source}: no poses")
    return FrameSequence(np.array(centers), np.array(rotations))


def read_poses(path):
    with open(path) as fh:
        return parse_poses(fh.read(), str(path))


def format_poses(seq):
    lines = []
    for R, c in zip(seq.rotations, seq.centers):
        M = np.hstack([R, np.asarray(c)[:, None]])
        lines.append(" ".join(repr(float(v)) for v in M.reshape(-1)))
    return "\n".join(lines) + "\n"


def write_poses(path, seq):
    with open(path, "w") as fh:
        fh.write(format_poses(seq))


def format_pose_line(pose):
    return " ".join(repr(float(v)) for v in pose.matrix.reshape(-1))


def read_relative_pose(path):
    """A single ``[R | t]`` line taking target-camera to source-camera
    coordinates (same 12-float layout as a pose file)."""
    with open(path) as fh:
        seq = parse_poses(fh.read(), str(path))
    if len(seq) != 1:
        raise BadLine(0, f"{path}: expected exactly one pose, found {len(seq)}")
    return RelativePose.from_rt(seq.rotations[0], seq.centers[0], reorthonormalize=True)


def write_relative_pose(path, pose):
    with open(path, "w") as fh:
        fh.write(format_pose_line(pose) + "\n")


# intrinsics


def read_intrinsics(path):
    with open(path) as fh:
        text = fh.read()
    try:
        vals = [float(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise BadHeader(f"{path}: intrinsics must be numbers") from None
    if len(vals) == 4:
        return Intrinsics(*vals)
    if len(vals) == 6:
        return Intrinsics(*vals[:4], int(vals[4]), int(vals[5]))
    if len(vals) == 9:
        return Intrinsics.from_matrix(np.array(vals).reshape(3, 3))
    raise BadHeader(f"{path}: expected 4, 6 or 9 numbers, got {len(vals)}")


def write_intrinsics(path, K):
    vals = [K.fx, K.fy, K.cx, K.cy]
    text = " ".join(repr(float(v)) for v in vals)
    if K.width is not None and K.height is not None:
        text += f" {K.width} {K.height}"
    with open(path, "w") as fh:
        fh.write(text + "\n")
