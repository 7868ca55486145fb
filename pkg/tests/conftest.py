import numpy as np
import pytest

from flowdepth.geometry import Intrinsics, RelativePose
from flowdepth.synth import SyntheticScene


def project_point(P, K, pose):
    """Independent pinhole projection of a target-frame 3-D point into the
    source view (plain loops over the formula, no shared code)."""
    X = pose.rotation @ np.asarray(P, dtype=float) + pose.translation
    return np.array([K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy])


def backproject(u, v, d, K):
    return np.array([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d])


def random_pose(rng, baseline=(0.3, 1.5), max_angle=0.1):
    omega = rng.normal(size=3)
    omega *= rng.uniform(0, max_angle) / np.linalg.norm(omega)
    t = rng.normal(size=3)
    t *= rng.uniform(*baseline) / np.linalg.norm(t)
    return RelativePose.from_vector(np.concatenate([omega, t]))


def random_intrinsics(rng, width=64, height=48):
    f = rng.uniform(60, 140)
    return Intrinsics(f, f * rng.uniform(0.9, 1.1), (width - 1) / 2 + rng.uniform(-3, 3),
                      (height - 1) / 2 + rng.uniform(-3, 3))


@pytest.fixture
def plane_scene():
    """Plane at 5 m, 1 m sideways baseline, K = diag(100, 100) + centre."""
    return SyntheticScene()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_admissible(flow, K, x, h, method="reprojection"):
    """True if central differences with step ``h`` around the 6-vector ``x``
    see a smooth objective: the positive-depth mask is the same at every
    probe and no pixel's residual can reach zero (where |r| has a kink)
    inside the probe interval."""
    from flowdepth.geometry import RelativePose, flow_to_depth

    base = flow_to_depth(flow, K, RelativePose.from_vector(x), method=method)
    m = base.positive_mask
    eps0 = base.residual[m]
    spread = np.zeros_like(eps0)
    for k in range(6):
        for s in (-1, 1):
            e = np.zeros(6)
            e[k] = s * h
            probe = flow_to_depth(flow, K, RelativePose.from_vector(x + e), method=method)
            if np.any(probe.positive_mask != m):
                return False
            spread = np.maximum(spread, np.abs(probe.residual[m] - eps0))
    return bool(np.all(eps0 > 2 * spread))


def central_difference(flow, K, x, h, method="reprojection"):
    from flowdepth.geometry import RelativePose, confidence_objective

    g = np.zeros(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fp = confidence_objective(flow, K, RelativePose.from_vector(x + e), method=method, gradient=False)[0]
        fm = confidence_objective(flow, K, RelativePose.from_vector(x - e), method=method, gradient=False)[0]
        g[k] = (fp - fm) / (2 * h)
    return g
