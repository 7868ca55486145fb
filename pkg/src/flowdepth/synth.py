"""Synthetic two-view scenes with exact flow, depth and pose.

Used as the ground-truth oracle for triangulation, refinement, fusion and the
metric code. Each target pixel is assigned a true depth; the flow is the exact
projection of that 3-D point into the source camera, optionally perturbed by
Gaussian noise. Points that leave the source image are marked invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ._config import parse_floats, parse_kv
from .errors import BadConfig, EmptyScene
from .geometry import FlowField, Intrinsics, RelativePose

KINDS = ("fronto_parallel", "tilted_plane", "point_cloud")


@dataclass
class SyntheticScene:
    kind: str = "fronto_parallel"
    width: int = 64
    height: int = 48
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(100.0, 100.0, 31.5, 23.5))
    pose: RelativePose = field(
        default_factory=lambda: RelativePose(np.eye(3), np.array([-1.0, 0.0, 0.0]))
    )
    depth: float = 5.0
    depth_range: tuple = (2.0, 20.0)
    tilt_deg: float = 20.0
    flow_noise: float = 0.0
    source_intrinsics: Intrinsics | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.depth <= 0:
            raise ValueError("plane depth must be positive")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad depth range {self.depth_range}")
        if self.flow_noise < 0:
            raise ValueError("flow noise must be non-negative")

    @property
    def source_camera(self):
        return self.intrinsics if self.source_intrinsics is None else self.source_intrinsics


def scene_depth(scene, seed=0):
    """True per-pixel depth of the target view."""
    H, W = scene.height, scene.width
    if scene.kind == "fronto_parallel":
        return np.full((H, W), float(scene.depth))
    if scene.kind == "point_cloud":
        rng = np.random.default_rng(seed)
        lo, hi = scene.depth_range
        return rng.uniform(lo, hi, size=(H, W))
    # plane through (0, 0, depth) whose normal is tilted about the camera x-axis
    tilt = np.deg2rad(scene.tilt_deg)
    normal = np.array([0.0, np.sin(tilt), np.cos(tilt)])
    v, u = np.mgrid[0:H, 0:W].astype(float)
    K = scene.intrinsics
    ray_dot = normal[0] * (u - K.cx) / K.fx + normal[1] * (v - K.cy) / K.fy + normal[2]
    if np.any(ray_dot <= 0):
        raise ValueError("tilted plane is not in front of the camera over the whole image")
    depth = scene.depth * normal[2] / ray_dot
    return depth


def project(depth, K, pose, K_source):
    """Source-image coordinates and source-camera z of every target pixel."""
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W].astype(float)
    P = np.stack(
        [(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth], axis=-1
    )
    Xs = P @ pose.rotation.T + pose.translation
    z = Xs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        us = K_source.fx * Xs[..., 0] / z + K_source.cx
        vs = K_source.fy * Xs[..., 1] / z + K_source.cy
    return np.stack([us, vs], axis=-1), z, np.stack([u, v], axis=-1)


def render(scene, seed=0):
    """Exact (optionally noisy) flow for ``scene``.

    Returns ``(flow, gt_depth, true_pose)``. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    depth = scene_depth(scene, seed=int(rng.integers(2**31)))
    Ks = scene.source_camera
    src, z, pix = project(depth, scene.intrinsics, scene.pose, Ks)
    W, H = Ks.width or scene.width, Ks.height or scene.height
    valid = (
        (z > 0)
        & np.all(np.isfinite(src), axis=-1)
        & (src[..., 0] >= 0)
        & (src[..., 0] <= W - 1)
        & (src[..., 1] >= 0)
        & (src[..., 1] <= H - 1)
    )
    if not np.any(valid):
        raise EmptyScene("no target pixel projects inside the source image")
    flow = np.where(valid[..., None], src - pix, np.nan)
    if scene.flow_noise > 0:
        noise = rng.normal(scale=scene.flow_noise, size=flow.shape)
        flow = flow + noise
    return FlowField(flow, valid), depth, scene.pose


def perturb_pose(pose, rot_deg, trans_frac, seed=0):
    """Rotate by exactly ``rot_deg`` about a random axis and shift the
    translation by exactly ``trans_frac * |t|`` in a random direction."""
    if rot_deg < 0 or trans_frac < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    dR = Rotation.from_rotvec(axis * np.deg2rad(rot_deg)).as_matrix()
    t = pose.translation + direction * trans_frac * np.linalg.norm(pose.translation)
    return RelativePose.from_rt(dR @ pose.rotation, t, reorthonormalize=True)


def random_scene(rng, width=48, height=32, flow_noise=0.0, kind=None,
                 baseline=(0.3, 1.5), depth_range=(3.0, 30.0), max_rotation_deg=2.0,
                 focal=(0.8, 1.5)):
    """A random, well-conditioned scene: sideways-dominant baseline, small
    rotation, depths a few metres to tens of metres. ``focal`` is the range
    of the focal length in units of the image width."""
    f = rng.uniform(*focal) * width
    K = Intrinsics(f, f * rng.uniform(0.95, 1.05), (width - 1) / 2 + rng.uniform(-2, 2),
                   (height - 1) / 2 + rng.uniform(-2, 2))
    direction = np.array([rng.choice([-1.0, 1.0]), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)])
    t = direction / np.linalg.norm(direction) * rng.uniform(*baseline)
    omega = rng.normal(size=3) * np.deg2rad(max_rotation_deg)
    pose = RelativePose.from_vector(np.concatenate([omega, t]))
    kind = kind or KINDS[int(rng.integers(len(KINDS)))]
    lo, hi = depth_range
    return SyntheticScene(
        kind=kind,
        width=width,
        height=height,
        intrinsics=K,
        pose=pose,
        depth=float(rng.uniform(max(lo, 4.0), min(hi, 15.0))),
        depth_range=(lo, hi),
        tilt_deg=float(rng.uniform(-25, 25)),
        flow_noise=flow_noise,
    )


# plain-text scene specification

_FLOAT_KEYS = ("fx", "fy", "cx", "cy", "depth", "depth_min", "depth_max", "tilt_deg", "flow_noise")


def parse_scene(text):
    """Parse a ``key = value`` scene description.

    Recognised keys: kind, width, height, fx, fy, cx, cy, depth, depth_min,
    depth_max, tilt_deg, rotation (axis-angle, 3 floats, radians),
    translation (3 floats, metres), flow_noise, seed. Returns
    ``(scene, seed)``.
    """
    kv = parse_kv(text)
    known = set(_FLOAT_KEYS) | {"kind", "width", "height", "rotation", "translation", "seed"}
    unknown = set(kv) - known
    if unknown:
        raise BadConfig(f"unknown scene keys: {sorted(unknown)}")
    try:
        width = int(kv.get("width", 64))
        height = int(kv.get("height", 48))
        num = {k: float(kv[k]) for k in _FLOAT_KEYS if k in kv}
        seed = int(kv.get("seed", 0))
    except ValueError as exc:
        raise BadConfig(f"bad scene value: {exc}") from None
    rot = np.array(parse_floats(kv.get("rotation", "0 0 0"), 3))
    trans = np.array(parse_floats(kv.get("translation", "-1 0 0"), 3))
    f = num.get("fx", 100.0)
    K = Intrinsics(f, num.get("fy", f), num.get("cx", (width - 1) / 2), num.get("cy", (height - 1) / 2))
    try:
        scene = SyntheticScene(
            kind=kv.get("kind", "fronto_parallel"),
            width=width,
            height=height,
            intrinsics=K,
            pose=RelativePose.from_vector(np.concatenate([rot, trans])),
            depth=num.get("depth", 5.0),
            depth_range=(num.get("depth_min", 2.0), num.get("depth_max", 20.0)),
            tilt_deg=num.get("tilt_deg", 20.0),
            flow_noise=num.get("flow_noise", 0.0),
        )
    except ValueError as exc:
        raise BadConfig(str(exc)) from None
    return scene, seed


def format_scene(scene, seed=0):
    K = scene.intrinsics
    vec = scene.pose.as_vector()
    lines = [
        f"kind = {scene.kind}",
        f"width = {scene.width}",
        f"height = {scene.height}",
        f"fx = {K.fx!r}",
        f"fy = {K.fy!r}",
        f"cx = {K.cx!r}",
        f"cy = {K.cy!r}",
        f"depth = {scene.depth!r}",
        f"depth_min = {scene.depth_range[0]!r}",
        f"depth_max = {scene.depth_range[1]!r}",
        f"tilt_deg = {scene.tilt_deg!r}",
        "rotation = " + " ".join(repr(float(v)) for v in vec[:3]),
        "translation = " + " ".join(repr(float(v)) for v in vec[3:]),
        f"flow_noise = {scene.flow_noise!r}",
        f"seed = {seed}",
    ]
    return "\n".join(lines) + "\n"


