"""Source-frame selection, proposal fusion and the fusion losses.

Fusion here is a deterministic rule: a confidence-weighted mean in disparity
space where at least one proposal is confident, nearest-neighbour inpainting
everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AllInvalid, DimensionMismatch, EmptyInput, NoGroundTruth, NoValidSource
from .geometry import DepthProposal, RelativePose

LAMBDA_DEPTH = 1.0
LAMBDA_SMOOTH = 0.5

DRIVING_THRESHOLD = 0.80
INDOOR_THRESHOLD = 0.12


@dataclass
class FrameSequence:
    """Camera centres (and optionally world-from-camera rotations) of a
    video, ``centers[i]`` belonging to frame ``indices[i]``."""

    centers: np.ndarray
    rotations: np.ndarray = None
    indices: np.ndarray = None
    intrinsics: list = None
    images: list = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.ndim != 2 or self.centers.shape[1] != 3:
            raise ValueError(f"centers must have shape (N, 3), got {self.centers.shape}")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("camera centres must be finite")
        n = len(self.centers)
        self.indices = np.arange(n) if self.indices is None else np.asarray(self.indices, dtype=int)
        if self.indices.shape != (n,) or np.any(np.diff(self.indices) <= 0):
            raise ValueError("frame indices must be strictly increasing, one per frame")
        if self.rotations is not None:
            self.rotations = np.asarray(self.rotations, dtype=float)
            if self.rotations.shape != (n, 3, 3):
                raise ValueError("rotations must have shape (N, 3, 3)")

    def __len__(self):
        return len(self.centers)

    def position(self, index):
        pos = np.searchsorted(self.indices, index)
        if pos >= len(self.indices) or self.indices[pos] != index:
            raise KeyError(f"frame {index} not in sequence")
        return int(pos)

    def world_from_camera(self, index):
        if self.rotations is None:
            raise ValueError("sequence has no orientations")
        i = self.position(index)
        return RelativePose.from_rt(self.rotations[i], self.centers[i], reorthonormalize=True)

    def relative_pose(self, target, source):
        """Transform taking target-camera coordinates to source-camera
        coordinates."""
        return self.world_from_camera(source).inverse().compose(self.world_from_camera(target))


def search_source_offset(centers, t, threshold, direction):
    """Smallest ``k >= 1`` with ``|O[t -/+ k] - O[t]| > threshold``.

    ``direction`` is ``"backward"`` or ``"forward"``; raises
    :class:`NoValidSource` if the sequence ends first.
    """
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if not 0 <= t < n:
        raise IndexError(f"frame {t} outside sequence of length {n}")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if direction == "backward":
        others = centers[t - 1 :: -1] if t > 0 else centers[:0]
    elif direction == "forward":
        others = centers[t + 1 :]
    else:
        raise ValueError(f"direction must be 'backward' or 'forward', got {direction!r}")
    dist = np.linalg.norm(others - centers[t], axis=1)
    hits = np.flatnonzero(dist > threshold)
    if hits.size == 0:
        raise NoValidSource(direction)
    return int(hits[0]) + 1


def select_source_frames(seq, t, threshold=DRIVING_THRESHOLD):
    """Offsets ``(k1, k2)`` of the backward and forward source frames for
    position ``t``; a direction without a valid source gives ``None``.

    Raises :class:`NoValidSource` (direction ``"both"``) if neither exists.
    """
    centers = seq.centers if isinstance(seq, FrameSequence) else seq
    found = []
    for direction in ("backward", "forward"):
        try:
            found.append(search_source_offset(centers, t, threshold, direction))
        except NoValidSource:
            found.append(None)
    if found == [None, None]:
        raise NoValidSource("both")
    return tuple(found)


@dataclass
class ExternalProposal:
    """Depth from another method; ``confidence`` defaults to the fusion
    config's ``external_default_confidence``."""

    depth: np.ndarray
    confidence: np.ndarray = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=float)
            if self.confidence.shape != self.depth.shape:
                raise DimensionMismatch("confidence and depth shapes differ")
            if np.any(self.confidence < 0) or np.any(self.confidence > 1):
                raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class FusionConfig:
    translation_threshold: float = DRIVING_THRESHOLD
    min_confidence: float = 0.05
    external_default_confidence: float = 0.5
    depth_cap: float = 80.0

    def __post_init__(self):
        if self.translation_threshold <= 0:
            raise ValueError("translation threshold must be positive")
        if not 0 <= self.min_confidence < 1:
            raise ValueError("min_confidence must be in [0, 1)")
        if not 0 <= self.external_default_confidence <= 1:
            raise ValueError("external_default_confidence must be in [0, 1]")
        if self.depth_cap <= 0:
            raise ValueError("depth_cap must be positive")

    @classmethod
    def driving(cls, **kw):
        return cls(**{"translation_threshold": DRIVING_THRESHOLD, "depth_cap": 80.0, **kw})

    @classmethod
    def indoor(cls, **kw):
        return cls(**{"translation_threshold": INDOOR_THRESHOLD, "depth_cap": 10.0, **kw})


def _weights(proposal, cfg):
    if isinstance(proposal, DepthProposal):
        depth, conf = proposal.depth, proposal.confidence
        usable = proposal.positive_mask
    elif isinstance(proposal, ExternalProposal):
        depth = proposal.depth
        conf = (
            np.full(depth.shape, cfg.external_default_confidence)
            if proposal.confidence is None
            else proposal.confidence
        )
        usable = np.ones(depth.shape, dtype=bool)
    else:  # pragma: no cover - rejected by fuse_proposals
        raise TypeError(f"unsupported proposal type {type(proposal).__name__}")
    usable = usable & np.isfinite(depth) & (depth > 0) & (conf > 0) & (conf >= cfg.min_confidence)
    return np.where(usable, depth, 1.0), np.where(usable, conf, 0.0), usable


def fuse_proposals(proposals, cfg=None):
    """Fuse depth proposals into one strictly positive depth map."""
    cfg = cfg or FusionConfig()
    proposals = list(proposals)
    if not proposals:
        raise EmptyInput("no proposals to fuse")
    for p in proposals:
        if not isinstance(p, (DepthProposal, ExternalProposal)):
            raise TypeError(f"unsupported proposal type {type(p).__name__}")
    shape = proposals[0].depth.shape
    if any(p.depth.shape != shape for p in proposals):
        raise DimensionMismatch("proposals have different shapes")

    num = np.zeros(shape)
    den = np.zeros(shape)
    for p in proposals:
        depth, w, _ = _weights(p, cfg)
        num += w / depth
        den += w
    covered = den > 0
    if not covered.any():
        raise AllInvalid("no pixel has a proposal above the confidence floor")
    fused = np.empty(shape)
    fused[covered] = den[covered] / num[covered]
    if not covered.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~covered, return_indices=True)
        fused[~covered] = fused[iy[~covered], ix[~covered]]
    return np.minimum(fused, cfg.depth_cap)


def loss_depth(pred, gt):
    """Sum of absolute log-depth differences over pixels with ground truth."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    mask = np.isfinite(gt) & (gt > 0)
    if not mask.any():
        raise NoGroundTruth("ground truth has no valid pixel")
    p = pred[mask]
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("prediction must be positive wherever ground truth exists")
    return float(np.sum(np.abs(np.log(p) - np.log(gt[mask]))))


def laplacian_disparity(pred):
    """5-point Laplacian of ``1 / pred`` on interior pixels, shape
    ``(H - 2, W - 2)``."""
    pred = np.asarray(pred, dtype=float)
    if pred.ndim != 2:
        raise ValueError("depth map must be 2-D")
    if np.any(~np.isfinite(pred)) or np.any(pred <= 0):
        raise ValueError("depth must be positive everywhere")
    disp = 1.0 / pred
    return (
        disp[:-2, 1:-1] + disp[2:, 1:-1] + disp[1:-1, :-2] + disp[1:-1, 2:] - 4.0 * disp[1:-1, 1:-1]
    )


def loss_smooth(pred):
    """Sum over interior pixels of the absolute Laplacian of disparity."""
    return float(np.sum(np.abs(laplacian_disparity(pred))))


def total_loss(pred, gt, lambda_depth=LAMBDA_DEPTH, lambda_smooth=LAMBDA_SMOOTH):
    return lambda_depth * loss_depth(pred, gt) + lambda_smooth * loss_smooth(pred)
