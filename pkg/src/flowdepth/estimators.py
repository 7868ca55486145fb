"""scikit-learn style wrappers around the functional API.

Each wrapper stores its constructor arguments verbatim (so ``get_params`` /
``set_params`` / ``clone`` work) and validates them when used. A flow field
plays the role of a sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_depth_map, check_flow, check_intrinsics, check_pose
from .fusion import ExternalProposal, FusionConfig, fuse_proposals
from .geometry import ConfidenceParams, DepthProposal, flow_to_depth
from .pose_refine import RefinementConfig, refine_pose, refinement_objective


class FlowToDepth(TransformerMixin, BaseEstimator):
    """Triangulate a depth proposal from flow under a fixed pose.

    Stateless: ``fit`` only validates the parameters.
    """

    def __init__(self, intrinsics=None, pose=None, sigma=20.0, method="reprojection"):
        self.intrinsics = intrinsics
        self.pose = pose
        self.sigma = sigma
        self.method = method

    def fit(self, X=None, y=None):
        self.intrinsics_ = check_intrinsics(self.intrinsics)
        self.pose_ = check_pose(self.pose)
        self.params_ = ConfidenceParams(self.sigma)
        return self

    def transform(self, X):
        """``DepthProposal`` for one flow field."""
        check_is_fitted(self, "pose_")
        return flow_to_depth(check_flow(X), self.intrinsics_, self.pose_, params=self.params_, method=self.method)


class PoseRefiner(TransformerMixin, BaseEstimator):
    """Refine a relative pose against one flow field.

    After ``fit``: ``refined_pose_``, ``result_`` (the full
    :class:`RefinementResult`) and ``n_iter_``. ``transform`` triangulates
    with the refined pose, ``score`` is the summed confidence there.
    """

    def __init__(self, intrinsics=None, initial_pose=None, sigma=20.0, max_iterations=100,
                 gradient_tolerance=1e-6, method="reprojection"):
        self.intrinsics = intrinsics
        self.initial_pose = initial_pose
        self.sigma = sigma
        self.max_iterations = max_iterations
        self.gradient_tolerance = gradient_tolerance
        self.method = method

    def fit(self, X, y=None):
        flow = check_flow(X)
        self.intrinsics_ = check_intrinsics(self.intrinsics)
        self.params_ = ConfidenceParams(self.sigma)
        cfg = RefinementConfig(max_iterations=self.max_iterations, gradient_tolerance=self.gradient_tolerance)
        self.result_ = refine_pose(flow, self.intrinsics_, check_pose(self.initial_pose), self.params_, cfg,
                                   method=self.method)
        self.refined_pose_ = self.result_.refined_pose
        self.n_iter_ = self.result_.iterations
        return self

    def transform(self, X):
        check_is_fitted(self, "refined_pose_")
        return flow_to_depth(check_flow(X), self.intrinsics_, self.refined_pose_, params=self.params_,
                             method=self.method)

    def score(self, X, y=None):
        check_is_fitted(self, "refined_pose_")
        return refinement_objective(check_flow(X), self.intrinsics_, self.refined_pose_, self.params_,
                                    method=self.method)


class ConfidenceFusion(BaseEstimator):
    """Fuse proposals into one depth map. ``predict`` takes a list of
    :class:`DepthProposal`, :class:`ExternalProposal` or bare depth arrays
    (treated as external proposals)."""

    def __init__(self, min_confidence=0.05, external_default_confidence=0.5, depth_cap=80.0):
        self.min_confidence = min_confidence
        self.external_default_confidence = external_default_confidence
        self.depth_cap = depth_cap

    def fit(self, X=None, y=None):
        self.config_ = FusionConfig(
            min_confidence=self.min_confidence,
            external_default_confidence=self.external_default_confidence,
            depth_cap=self.depth_cap,
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "config_")
        proposals = [
            p if isinstance(p, (DepthProposal, ExternalProposal)) else ExternalProposal(check_depth_map(p))
            for p in X
        ]
        return fuse_proposals(proposals, self.config_)

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)


def stack_proposal(proposal):
    """``(H, W, 2)`` array of depth (NaN where not positive) and confidence."""
    depth = np.where(proposal.positive_mask, proposal.depth, np.nan)
    return np.stack([depth, proposal.confidence], axis=-1)
