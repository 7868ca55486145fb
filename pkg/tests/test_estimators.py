import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from flowdepth._validation import check_depth_map, check_flow, check_intrinsics, check_pose
from flowdepth.estimators import ConfidenceFusion, FlowToDepth, PoseRefiner, stack_proposal
from flowdepth.geometry import FlowField, Intrinsics, RelativePose, flow_to_depth
from flowdepth.synth import SyntheticScene, perturb_pose, render


@pytest.fixture
def scene_data():
    scene = SyntheticScene(kind="point_cloud")
    flow, gt, pose = render(scene, seed=2)
    return scene, flow, gt, pose


def test_flow_to_depth_transform(scene_data):
    scene, flow, gt, pose = scene_data
    est = FlowToDepth(intrinsics=scene.intrinsics, pose=pose).fit()
    prop = est.transform(flow)
    np.testing.assert_allclose(prop.depth[flow.valid], gt[flow.valid], rtol=1e-9)
    # raw arrays and alternative pose / intrinsics encodings work too
    est2 = FlowToDepth(intrinsics=scene.intrinsics.matrix, pose=pose.as_vector())
    prop2 = est2.fit_transform(np.where(flow.valid[..., None], flow.flow, np.nan))
    np.testing.assert_allclose(prop2.depth[flow.valid], gt[flow.valid], rtol=1e-9)


def test_params_round_trip():
    est = FlowToDepth(sigma=7.0, method="algebraic")
    assert est.get_params() == {"intrinsics": None, "pose": None, "sigma": 7.0, "method": "algebraic"}
    other = clone(est).set_params(sigma=3.0)
    assert other.sigma == 3.0 and est.sigma == 7.0
    assert set(PoseRefiner().get_params()) == {
        "intrinsics", "initial_pose", "sigma", "max_iterations", "gradient_tolerance", "method"}


def test_not_fitted(scene_data):
    _, flow, _, _ = scene_data
    with pytest.raises(NotFittedError):
        FlowToDepth().transform(flow)
    with pytest.raises(NotFittedError):
        PoseRefiner().transform(flow)
    with pytest.raises(NotFittedError):
        ConfidenceFusion().predict([np.ones((2, 2))])


def test_invalid_params(scene_data):
    scene, flow, _, pose = scene_data
    with pytest.raises(ValueError):
        FlowToDepth(intrinsics=scene.intrinsics, pose=pose, sigma=0).fit()
    with pytest.raises(ValueError):
        FlowToDepth(intrinsics=np.eye(2), pose=pose).fit()
    with pytest.raises(ValueError):
        FlowToDepth(intrinsics=scene.intrinsics, pose=np.zeros(5)).fit()


def test_pose_refiner(scene_data):
    scene, flow, gt, pose = scene_data
    start = perturb_pose(pose, 0.5, 0.01, seed=4)
    est = PoseRefiner(intrinsics=scene.intrinsics, initial_pose=start).fit(flow)
    assert est.refined_pose_.rotation_distance(pose) < 1e-3
    assert est.n_iter_ == est.result_.iterations
    assert est.score(flow) == pytest.approx(est.result_.final_objective)
    assert est.score(flow) >= est.result_.initial_objective
    prop = est.transform(flow)
    assert prop.confidence[flow.valid].mean() > 0.99


def test_confidence_fusion(scene_data):
    scene, flow, gt, pose = scene_data
    prop = flow_to_depth(flow, scene.intrinsics, pose)
    fusion = ConfidenceFusion(depth_cap=80.0)
    out = fusion.fit_predict([prop, prop])
    np.testing.assert_allclose(out[flow.valid], gt[flow.valid], rtol=1e-9)
    # bare arrays count as external proposals at the default confidence
    out2 = fusion.predict([np.full(gt.shape, 4.0)])
    np.testing.assert_array_equal(out2, 4.0)


def test_stack_proposal(scene_data):
    scene, flow, gt, pose = scene_data
    arr = stack_proposal(flow_to_depth(flow, scene.intrinsics, pose))
    assert arr.shape == gt.shape + (2,)
    assert np.isnan(arr[~flow.valid, 0]).all()


def test_validation_helpers():
    f = check_flow(np.zeros((2, 3, 2)))
    assert isinstance(f, FlowField) and f.shape == (2, 3)
    with pytest.raises(ValueError):
        check_flow(np.zeros((2, 3)))
    d = check_depth_map([[1, 2], [np.nan, -1]])
    assert d.dtype == np.float64
    with pytest.raises(ValueError):
        check_depth_map(np.zeros((2, 2, 2)))
    assert check_intrinsics([100, 100, 1, 2]) == Intrinsics(100, 100, 1, 2)
    assert check_pose(np.hstack([np.eye(3), np.ones((3, 1))])) == RelativePose(np.eye(3), np.ones(3))
