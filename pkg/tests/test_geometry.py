import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from flowdepth.errors import DegenerateRay, DimensionMismatch
from flowdepth.geometry import (
    ConfidenceParams,
    FlowField,
    Intrinsics,
    RelativePose,
    confidence_gradient_wrt_pose,
    confidence_objective,
    flow_to_depth,
    reprojection_error,
    rotation_jacobians,
    triangulate_pixel,
)
from flowdepth.synth import SyntheticScene, render

from conftest import (
    backproject,
    central_difference,
    fd_admissible,
    project_point,
    random_intrinsics,
    random_pose,
)

I3 = np.eye(3)


# triangulate_pixel


def test_stereo_hand_example():
    # a = (0,0,1), b = (-1,0,0), m = (0.5,0), n = (1,0) -> d = 2
    M = np.hstack([I3, [[-1.0], [0.0], [0.0]]])
    d, eps = triangulate_pixel((0, 0), (-0.5, 0), I3, M)
    assert d == pytest.approx(2.0, abs=1e-15)
    assert eps == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("method", ["reprojection", "algebraic"])
def test_both_forms_agree_on_hand_example(method):
    M = np.hstack([I3, [[-1.0], [0.0], [0.0]]])
    assert triangulate_pixel((0, 0), (-0.5, 0), I3, M, method=method)[0] == pytest.approx(2.0)


def test_zero_baseline_is_degenerate():
    M = np.hstack([I3, np.zeros((3, 1))])
    with pytest.raises(DegenerateRay):
        triangulate_pixel((3, 4), (3, 4), I3, M)


def test_unknown_method_rejected():
    M = np.hstack([I3, [[-1.0], [0.0], [0.0]]])
    with pytest.raises(ValueError):
        triangulate_pixel((0, 0), (-0.5, 0), I3, M, method="midpoint")


def test_non_finite_pixel_rejected():
    M = np.hstack([I3, [[-1.0], [0.0], [0.0]]])
    with pytest.raises(ValueError):
        triangulate_pixel((np.nan, 0), (-0.5, 0), I3, M)


def test_negative_depth_returned_unmasked():
    # flow pointing the "wrong" way triangulates behind the camera
    M = np.hstack([I3, [[-1.0], [0.0], [0.0]]])
    d, _ = triangulate_pixel((0, 0), (0.5, 0), I3, M)
    assert d == pytest.approx(-2.0)


def test_round_trip_random(rng):
    for _ in range(200):
        K = random_intrinsics(rng)
        pose = random_pose(rng)
        u, v = rng.uniform(0, 64), rng.uniform(0, 48)
        d0 = rng.uniform(1, 50)
        pp = project_point(backproject(u, v, d0, K), K, pose)
        for method in ("reprojection", "algebraic"):
            d, eps = triangulate_pixel((u, v), pp, K, pose.camera_matrix(K), method=method)
            assert abs(d - d0) <= 1e-9 * d0
            assert eps < 1e-9


def _oracle_min(p, pp, K, M, d_star):
    # independent 1-D minimisation of the reprojection error near d*
    f = lambda d: reprojection_error(d, p, pp, K, M)
    res = minimize_scalar(f, bracket=(0.9 * d_star, d_star, 1.1 * d_star), tol=1e-14)
    return res.fun


def test_closed_form_is_local_minimiser(rng):
    for _ in range(200):
        K = random_intrinsics(rng)
        pose = random_pose(rng)
        u, v = rng.uniform(0, 64), rng.uniform(0, 48)
        pp = project_point(backproject(u, v, rng.uniform(2, 30), K), K, pose) + rng.normal(scale=2, size=2)
        M = pose.camera_matrix(K)
        d, eps = triangulate_pixel((u, v), pp, K, M)
        for delta in (1e-3, 1e-2, 1e-1):
            for s in (-1, 1):
                assert eps <= reprojection_error(d + s * delta * abs(d), (u, v), pp, K, M) + 1e-12
        assert eps <= _oracle_min((u, v), pp, K, M, d) + 1e-9


def test_residual_matches_reprojection_error(rng):
    K = random_intrinsics(rng)
    pose = random_pose(rng)
    M = pose.camera_matrix(K)
    d, eps = triangulate_pixel((10.0, 20.0), (3.0, 21.5), K, M)
    assert eps == pytest.approx(float(reprojection_error(d, (10.0, 20.0), (3.0, 21.5), K, M)), rel=1e-12)


# flow_to_depth


def test_plane_closure(plane_scene):
    flow, gt, pose = render(plane_scene)
    prop = flow_to_depth(flow, plane_scene.intrinsics, pose)
    v = flow.valid
    assert v.any()
    np.testing.assert_allclose(prop.depth[v], 5.0, rtol=1e-6)
    np.testing.assert_allclose(prop.confidence[v], 1.0, atol=1e-9)
    assert np.all(prop.positive_mask == v)


def test_reversed_translation_gives_negative_depths(plane_scene):
    flow, _, pose = render(plane_scene)
    flipped = RelativePose(pose.rotation, -pose.translation)
    prop = flow_to_depth(flow, plane_scene.intrinsics, flipped)
    assert not prop.positive_mask.any()
    assert np.all(prop.confidence == 0)
    assert np.all(prop.depth[flow.valid] < 0)


def test_confidence_at_sigma():
    # one pixel whose residual is exactly 20 px: the source pixel lies 20 px
    # off the epipolar line (baseline along x, offset along y)
    K = Intrinsics(100, 100, 0, 0)
    pose = RelativePose(I3, [-1.0, 0.0, 0.0])
    flow = FlowField(np.array([[[-20.0, 20.0]]]))
    prop = flow_to_depth(flow, K, pose, params=ConfidenceParams(20.0))
    assert prop.residual[0, 0] == pytest.approx(20.0, abs=1e-12)
    assert prop.confidence[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert prop.confidence[0, 0] == pytest.approx(0.367879, abs=1e-6)


def test_invalid_flow_pixels_masked(plane_scene):
    flow, _, pose = render(plane_scene)
    valid = flow.valid.copy()
    valid[:5] = False
    prop = flow_to_depth(FlowField(flow.flow, valid), plane_scene.intrinsics, pose)
    assert not prop.positive_mask[:5].any()
    assert np.all(prop.confidence[:5] == 0)


def test_pure_rotation_is_degenerate_everywhere():
    scene = SyntheticScene(pose=RelativePose.from_vector([0.0, 0.02, 0.0, 0, 0, 0]))
    flow, _, pose = render(scene)
    prop = flow_to_depth(flow, scene.intrinsics, pose)
    assert not prop.positive_mask.any()


def test_dimension_mismatch(plane_scene):
    flow, _, pose = render(plane_scene)
    with pytest.raises(DimensionMismatch):
        flow_to_depth(flow, plane_scene.intrinsics.with_size(10, 10), pose)


def test_separate_source_intrinsics():
    Ks = Intrinsics(120, 110, 30.0, 25.0)
    scene = SyntheticScene(kind="point_cloud", source_intrinsics=Ks)
    flow, gt, pose = render(scene, seed=3)
    prop = flow_to_depth(flow, scene.intrinsics, pose, K_source=Ks)
    np.testing.assert_allclose(prop.depth[flow.valid], gt[flow.valid], rtol=1e-9)


def test_scale_covariance(rng):
    for s in (0.5, 2.0, 7.3):
        base = SyntheticScene(kind="point_cloud")
        scaled = SyntheticScene(
            kind="point_cloud",
            pose=RelativePose(base.pose.rotation, base.pose.translation * s),
            depth_range=(base.depth_range[0] * s, base.depth_range[1] * s),
        )
        f1, g1, p1 = render(base, seed=4)
        f2, g2, p2 = render(scaled, seed=4)
        np.testing.assert_allclose(g2, g1 * s, rtol=1e-12)
        d1 = flow_to_depth(f1, base.intrinsics, p1).depth
        d2 = flow_to_depth(f2, scaled.intrinsics, p2).depth
        v = f1.valid & f2.valid
        np.testing.assert_allclose(d2[v], s * d1[v], rtol=1e-9)


@settings(max_examples=50, deadline=None)
@given(noise=st.floats(0, 5), seed=st.integers(0, 2**16))
def test_confidence_range_and_monotonicity(noise, seed):
    scene = SyntheticScene(kind="point_cloud", flow_noise=noise)
    flow, _, pose = render(scene, seed=seed)
    prop = flow_to_depth(flow, scene.intrinsics, pose)
    c = prop.confidence
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(c[~prop.positive_mask] == 0)
    m = prop.positive_mask
    # strictly decreasing in the residual
    order = np.argsort(prop.residual[m])
    assert np.all(np.diff(c[m][order]) <= 0)
    np.testing.assert_allclose(c[m], np.exp(-prop.residual[m] / 20.0))


def test_partition_independence(plane_scene):
    # per-pixel results do not depend on which other pixels are processed
    scene = SyntheticScene(kind="point_cloud", flow_noise=0.5)
    flow, _, pose = render(scene, seed=1)
    full = flow_to_depth(flow, scene.intrinsics, pose)
    top = FlowField(flow.flow[:20], flow.valid[:20])
    part = flow_to_depth(top, scene.intrinsics, pose)
    np.testing.assert_array_equal(part.depth, full.depth[:20])
    np.testing.assert_array_equal(part.confidence, full.confidence[:20])


# pose chart


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_chart_round_trip(x):
    x = np.array(x)
    x[:3] *= 3.0 / max(1.0, np.linalg.norm(x[:3]) / 1.0)  # keep |omega| < pi
    pose = RelativePose.from_vector(x)
    np.testing.assert_allclose(pose.as_vector(), x, atol=1e-9)
    R = pose.rotation
    assert np.max(np.abs(R.T @ R - I3)) < 1e-9
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_pose_validation():
    with pytest.raises(ValueError):
        RelativePose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RelativePose(I3 * 1.001, np.zeros(3))
    with pytest.raises(ValueError):
        RelativePose(I3, [np.nan, 0, 0])


def test_inverse_and_compose(rng):
    a, b = random_pose(rng), random_pose(rng)
    ident = a.compose(a.inverse())
    np.testing.assert_allclose(ident.rotation, I3, atol=1e-12)
    np.testing.assert_allclose(ident.translation, 0, atol=1e-12)
    P = rng.normal(size=3)
    ab = a.compose(b)
    np.testing.assert_allclose(ab.rotation @ P + ab.translation,
                               a.rotation @ (b.rotation @ P + b.translation) + a.translation, atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0, 100, 1, 1)
    K = Intrinsics(100, 90, 30, 20)
    np.testing.assert_allclose(K.matrix @ K.inverse, I3, atol=1e-15)
    assert Intrinsics.from_matrix(K.matrix) == K


# derivatives


def test_rotation_jacobians_vs_finite_differences(rng):
    from scipy.spatial.transform import Rotation

    for omega in [np.zeros(3), rng.normal(size=3) * 0.3, rng.normal(size=3) * 1e-9, np.array([2.0, -1.0, 0.5])]:
        J = rotation_jacobians(omega)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (Rotation.from_rotvec(omega + e).as_matrix() - Rotation.from_rotvec(omega - e).as_matrix()) / (2 * h)
            np.testing.assert_allclose(J[i], fd, atol=1e-8)


def test_gradient_zero_at_true_pose(plane_scene):
    for kind in ("fronto_parallel", "tilted_plane", "point_cloud"):
        scene = SyntheticScene(kind=kind)
        flow, _, pose = render(scene, seed=2)
        g = confidence_gradient_wrt_pose(flow, scene.intrinsics, pose)
        assert np.linalg.norm(g) < 1e-6


def test_gradient_zero_when_all_negative(plane_scene):
    flow, _, pose = render(plane_scene)
    flipped = RelativePose(pose.rotation, -pose.translation)
    value, g = confidence_objective(flow, plane_scene.intrinsics, flipped)
    assert value == 0
    np.testing.assert_array_equal(g, 0)


def test_gradient_matches_finite_differences_noisy_scene():
    scene = SyntheticScene(kind="point_cloud", flow_noise=1.0, width=32, height=24,
                           intrinsics=Intrinsics(50, 50, 15.5, 11.5))
    checked = 0
    for seed in range(10):
        flow, _, pose = render(scene, seed=seed)
        x0 = pose.as_vector() + np.array([0.003, -0.002, 0.001, 0.01, 0.02, -0.01])
        # the algebraic objective is much more curved; a 1e-5 step leaves
        # O(h^2) truncation error near 1e-4, so probe it more finely
        for method, h in (("reprojection", 1e-5), ("algebraic", 1e-6)):
            if not fd_admissible(flow, scene.intrinsics, x0, h, method):
                continue
            _, g = confidence_objective(flow, scene.intrinsics, RelativePose.from_vector(x0), method=method)
            fd = central_difference(flow, scene.intrinsics, x0, h, method)
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-7)
            checked += 1
    assert checked >= 8


def test_kink_configuration_is_detected():
    # seed 11 puts one pixel's residual at ~1.6e-4 px, inside the probe
    # interval, so finite differences straddle the |r| kink
    scene = SyntheticScene(kind="point_cloud", flow_noise=1.0, width=32, height=24,
                           intrinsics=Intrinsics(50, 50, 15.5, 11.5))
    flow, _, pose = render(scene, seed=11)
    x0 = pose.as_vector() + np.array([0.003, -0.002, 0.001, 0.01, 0.02, -0.01])
    assert not fd_admissible(flow, scene.intrinsics, x0, 1e-5)
