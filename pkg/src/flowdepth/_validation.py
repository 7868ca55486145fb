"""Input coercion shared by the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array

from .geometry import FlowField, Intrinsics, RelativePose


def check_flow(flow):
    """``FlowField`` from a field or an ``(H, W, 2)`` array (NaN = invalid)."""
    if isinstance(flow, FlowField):
        return flow
    arr = np.asarray(flow, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"expected flow of shape (H, W, 2), got {arr.shape}")
    return FlowField(arr)


def check_depth_map(depth, name="depth"):
    """2-D float array; non-finite and non-positive values are allowed and
    mean "no data"."""
    return check_array(depth, dtype=np.float64, ensure_all_finite=False, input_name=name)


def check_intrinsics(K):
    if isinstance(K, Intrinsics):
        return K
    arr = np.asarray(K, dtype=float)
    if arr.shape == (3, 3):
        return Intrinsics.from_matrix(arr)
    if arr.shape == (4,):
        return Intrinsics(*arr)
    raise ValueError(f"intrinsics must be an Intrinsics, a 3x3 matrix or (fx, fy, cx, cy); got shape {arr.shape}")


def check_pose(pose):
    """``RelativePose`` from a pose, a 6-vector ``(omega, t)`` or a 3x4
    ``[R | t]`` matrix."""
    if isinstance(pose, RelativePose):
        return pose
    arr = np.asarray(pose, dtype=float)
    if arr.shape == (6,):
        return RelativePose.from_vector(arr)
    if arr.shape == (3, 4):
        return RelativePose.from_rt(arr[:, :3], arr[:, 3])
    raise ValueError(f"pose must be a RelativePose, a 6-vector or a 3x4 matrix; got shape {arr.shape}")
