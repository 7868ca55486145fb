"""Depth from optical flow and camera pose.

Per-pixel closed-form triangulation with a reprojection confidence,
relative-pose refinement by maximising that confidence, confidence-weighted
fusion of several depth proposals, and the standard depth metrics.
"""

from .errors import (
    AllInvalid,
    BadMagic,
    DegenerateRay,
    DimensionMismatch,
    EmptyInput,
    EmptyScene,
    FlowDepthError,
    MalformedFile,
    NoGroundTruth,
    NonFiniteObjective,
    NoValidSource,
)
from .estimators import ConfidenceFusion, FlowToDepth, PoseRefiner
from .fusion import (
    ExternalProposal,
    FrameSequence,
    FusionConfig,
    fuse_proposals,
    loss_depth,
    loss_smooth,
    select_source_frames,
    total_loss,
)
from .geometry import (
    ConfidenceParams,
    DepthProposal,
    FlowField,
    Intrinsics,
    RelativePose,
    confidence_gradient_wrt_pose,
    confidence_objective,
    flow_to_depth,
    triangulate_pixel,
)
from .metrics import MetricReport, evaluate
from .pose_refine import RefinementConfig, RefinementResult, refine_pose, refinement_objective
from .synth import SyntheticScene, perturb_pose, render

__version__ = "0.1.0"
