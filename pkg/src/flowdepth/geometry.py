"""Per-pixel two-view triangulation from optical flow.

The target camera frame is the world frame. A pixel ``p`` of the target image
back-projects to the ray ``d * K^-1 p``; the source camera matrix
``M' = K_s [R | t]`` maps it to ``d * a + b`` with ``a = K_s R K^-1 p`` and
``b = K_s t``. Given the flow-matched source pixel ``p'`` the depth ``d`` is
solved in closed form and the remaining reprojection error is turned into a
confidence ``exp(-eps / sigma)``.

Two closed forms are available:

``"reprojection"`` (default)
    the exact minimiser of the pixel reprojection error. The projection of
    ``d * a + b`` moves along the epipolar line with direction
    ``w = b3 a[:2] - a3 b[:2]``; the optimum is where the residual is
    orthogonal to that line, ``d = w.n / w.m``.
``"algebraic"``
    ``d = m.n / m.m``, the least-squares solution of the cross-multiplied
    residual ``d m - n``. It coincides with the exact minimiser when the
    correspondence is noiseless and drifts away from it under flow noise.

with ``m = a[:2] - a3 p'`` and ``n = b3 p' - b[:2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateRay, DimensionMismatch

DEGENERATE_TOL = 1e-12
# residuals below this (pixels) are treated as exactly zero when
# differentiating |r|, whose direction is undefined at the origin
RESIDUAL_FLOOR = 1e-9
METHODS = ("reprojection", "algebraic")


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics. ``width``/``height`` are optional and only used
    to check that a flow field belongs to this camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        vals = np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_matrix(cls, K, width=None, height=None):
        K = np.asarray(K, dtype=float)
        if K.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {K.shape}")
        if abs(K[0, 1]) > 1e-12 or np.any(np.abs(K[2] - [0, 0, 1]) > 1e-12) or abs(K[1, 0]) > 1e-12:
            raise ValueError("only zero-skew pinhole matrices are supported")
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self):
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def with_size(self, width, height):
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, int(width), int(height))


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _project_to_so3(R):
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Rigid transform taking target-camera coordinates to source-camera
    coordinates: ``X_s = R X_t + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t, reorthonormalize=False):
        R = np.asarray(R, dtype=float)
        if reorthonormalize:
            R = _project_to_so3(R)
        return cls(R, t)

    @classmethod
    def from_vector(cls, x):
        """Build from the 6-vector chart ``(omega, t)``, omega axis-angle."""
        x = np.asarray(x, dtype=float)
        if x.shape != (6,):
            raise ValueError(f"expected a 6-vector, got shape {x.shape}")
        return cls(Rotation.from_rotvec(x[:3]).as_matrix(), x[3:])

    def as_vector(self):
        return np.concatenate([Rotation.from_matrix(self.rotation).as_rotvec(), self.translation])

    @property
    def matrix(self):
        """The 3x4 matrix ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def camera_matrix(self, K_source):
        K = K_source.matrix if isinstance(K_source, Intrinsics) else np.asarray(K_source, float)
        return K @ self.matrix

    def inverse(self):
        Rt = self.rotation.T
        return RelativePose(Rt, -Rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RelativePose.from_rt(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            reorthonormalize=True,
        )

    def rotation_distance(self, other):
        """Geodesic angle (radians) between the two rotations."""
        rel = Rotation.from_matrix(self.rotation.T @ other.rotation)
        return float(np.linalg.norm(rel.as_rotvec()))

    def __eq__(self, other):
        if not isinstance(other, RelativePose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"RelativePose(vector={np.array2string(self.as_vector(), precision=6)})"


@dataclass(eq=False)
class FlowField:
    """Dense target-to-source flow, shape ``(H, W, 2)`` in pixels.

    Non-finite flow vectors are always treated as invalid.
    """

    flow: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        if flow.ndim != 3 or flow.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {flow.shape}")
        finite = np.all(np.isfinite(flow), axis=2)
        if self.valid is None:
            valid = finite
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != flow.shape[:2]:
                raise DimensionMismatch(f"mask shape {valid.shape} does not match flow {flow.shape[:2]}")
            valid = valid & finite
        self.flow = flow
        self.valid = valid

    @property
    def height(self):
        return self.flow.shape[0]

    @property
    def width(self):
        return self.flow.shape[1]

    @property
    def shape(self):
        return self.flow.shape[:2]


@dataclass(eq=False)
class DepthProposal:
    depth: np.ndarray
    confidence: np.ndarray
    positive_mask: np.ndarray
    residual: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class ConfidenceParams:
    sigma: float = 20.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def _as_matrix(K):
    if isinstance(K, Intrinsics):
        return K.matrix
    return np.asarray(K, dtype=float)


def _check_method(method):
    if method not in METHODS:
        raise ValueError(f"unknown triangulation method {method!r}; expected one of {METHODS}")


def _solve(a, b, pp, method):
    """Vectorised closed-form depth.

    ``a`` is ``(N, 3)``, ``b`` a 3-vector, ``pp`` the ``(N, 2)`` source pixels.
    Returns a dict with depth, residual vector and the degenerate mask plus
    the intermediates needed for differentiation.
    """
    m = a[:, :2] - a[:, 2:3] * pp
    n = b[2] * pp - b[:2]
    mm = np.einsum("ij,ij->i", m, m)
    degenerate = mm < DEGENERATE_TOL
    if method == "algebraic":
        u = m
        den = mm
    else:
        u = b[2] * a[:, :2] - a[:, 2:3] * b[:2]
        den = np.einsum("ij,ij->i", u, m)
        uu = np.einsum("ij,ij->i", u, u)
        degenerate |= uu < DEGENERATE_TOL
        degenerate |= np.abs(den) <= DEGENERATE_TOL * np.sqrt(uu * mm)
    num = np.einsum("ij,ij->i", u, n)
    safe_den = np.where(degenerate, 1.0, den)
    d = np.where(degenerate, np.nan, num / safe_den)
    x = d[:, None] * a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        r = x[:, :2] / x[:, 2:3] - pp
    eps = np.sqrt(np.einsum("ij,ij->i", r, r))
    return dict(m=m, n=n, u=u, num=num, den=safe_den, d=d, x=x, r=r, eps=eps, degenerate=degenerate)


def reprojection_error(d, p, p_prime, K, M_prime):
    """Pixel distance between ``p'`` and the projection of depth ``d`` along
    the ray of ``p``. ``d`` may be an array of candidate depths."""
    p = np.asarray(p, dtype=float)
    pp = np.asarray(p_prime, dtype=float)[:2]
    M = np.asarray(M_prime, dtype=float)
    q = np.linalg.solve(_as_matrix(K), np.array([p[0], p[1], 1.0]))
    a = M[:, :3] @ q
    b = M[:, 3]
    d = np.asarray(d, dtype=float)
    x = d[..., None] * a + b
    proj = x[..., :2] / x[..., 2:3]
    return np.linalg.norm(proj - pp, axis=-1)


def triangulate_pixel(p, p_prime, K, M_prime, method="reprojection"):
    """Depth of target pixel ``p`` matched to source pixel ``p_prime``.

    Returns ``(depth, residual)``. The depth may be negative; callers decide
    what to do with points behind the camera. Raises :class:`DegenerateRay`
    when the correspondence carries no parallax.
    """
    _check_method(method)
    p = np.asarray(p, dtype=float)
    pp = np.asarray(p_prime, dtype=float)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(pp))):
        raise ValueError("pixel coordinates must be finite")
    Km = _as_matrix(K)
    M = np.asarray(M_prime, dtype=float)
    if M.shape != (3, 4):
        raise ValueError(f"camera matrix must be 3x4, got {M.shape}")
    q = np.linalg.solve(Km, np.array([p[0], p[1], 1.0]))
    a = (M[:, :3] @ q)[None, :]
    sol = _solve(a, M[:, 3], pp[None, :2], method)
    if sol["degenerate"][0]:
        raise DegenerateRay(f"no parallax at pixel {tuple(p[:2])}")
    return float(sol["d"][0]), float(sol["eps"][0])


def _pixel_rays(K, height, width):
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    Kinv = K.inverse
    x = Kinv[0, 0] * u + Kinv[0, 2]
    y = Kinv[1, 1] * v + Kinv[1, 2]
    return np.stack([x, y, np.ones_like(x)], axis=-1), np.stack([u, v], axis=-1)


def _check_dims(flow, K, K_source):
    for cam in (K, K_source):
        if cam.width is not None and cam.width != flow.width:
            raise DimensionMismatch(f"flow width {flow.width} != intrinsics width {cam.width}")
        if cam.height is not None and cam.height != flow.height:
            raise DimensionMismatch(f"flow height {flow.height} != intrinsics height {cam.height}")


def _prepare(flow, K, pose, K_source):
    if not isinstance(flow, FlowField):
        raise TypeError("flow must be a FlowField")
    K_source = K if K_source is None else K_source
    _check_dims(flow, K, K_source)
    rays, pix = _pixel_rays(K, flow.height, flow.width)
    sel = flow.valid.reshape(-1)
    q = rays.reshape(-1, 3)[sel]
    pp = (pix + flow.flow).reshape(-1, 2)[sel]
    Ks = K_source.matrix
    return sel, q, pp, Ks


def _confidence_from(sol, sigma):
    d, eps = sol["d"], sol["eps"]
    positive = ~sol["degenerate"] & (d > 0) & np.isfinite(eps)
    # x3 <= 0 puts the point behind the source camera; its projection is
    # meaningless even if the target-side depth is positive
    positive &= sol["x"][:, 2] > 0
    conf = np.where(positive, np.exp(-np.where(positive, eps, 0.0) / sigma), 0.0)
    return positive, conf


def flow_to_depth(flow, K, pose, K_source=None, params=None, method="reprojection"):
    """Depth proposal and confidence map for a target/source pair.

    Pixels with invalid flow, degenerate geometry or non-positive depth get
    ``positive_mask = False`` and zero confidence; their depth entry is the
    raw closed-form value (NaN where degenerate or the flow is invalid).
    """
    _check_method(method)
    params = params or ConfidenceParams()
    sel, q, pp, Ks = _prepare(flow, K, pose, K_source)
    a = q @ (Ks @ pose.rotation).T
    b = Ks @ pose.translation
    sol = _solve(a, b, pp, method)
    positive, conf = _confidence_from(sol, params.sigma)

    n = sel.size
    depth = np.full(n, np.nan)
    residual = np.full(n, np.nan)
    confidence = np.zeros(n)
    mask = np.zeros(n, dtype=bool)
    depth[sel] = sol["d"]
    residual[sel] = sol["eps"]
    confidence[sel] = conf
    mask[sel] = positive
    shape = flow.shape
    return DepthProposal(
        depth.reshape(shape), confidence.reshape(shape), mask.reshape(shape), residual.reshape(shape)
    )


def rotation_jacobians(omega):
    """``dR/d omega_i`` for the axis-angle chart, as three 3x3 matrices."""
    omega = np.asarray(omega, dtype=float)
    R = Rotation.from_rotvec(omega).as_matrix()
    theta2 = float(omega @ omega)
    E = np.eye(3)
    if theta2 < 1e-14:
        return [_skew(E[i]) @ R for i in range(3)]
    W = _skew(omega)
    I_R = np.eye(3) - R
    return [(omega[i] * W + _skew(np.cross(omega, I_R @ E[i]))) @ R / theta2 for i in range(3)]


def confidence_objective(flow, K, pose, K_source=None, params=None, method="reprojection", gradient=True):
    """Summed confidence over positive-depth pixels and, optionally, its
    gradient with respect to the 6-vector pose chart ``(omega, t)``.

    The positive-depth set is held fixed at ``pose``; pixels outside it
    contribute neither value nor gradient.
    """
    _check_method(method)
    params = params or ConfidenceParams()
    sigma = params.sigma
    sel, q, pp, Ks = _prepare(flow, K, pose, K_source)
    A = Ks @ pose.rotation
    a = q @ A.T
    b = Ks @ pose.translation
    sol = _solve(a, b, pp, method)
    positive, conf = _confidence_from(sol, sigma)
    value = float(np.sum(conf))
    if not gradient:
        return value, None

    grad = np.zeros(6)
    if not np.any(positive):
        return value, grad

    a = a[positive]
    ppk = pp[positive]
    m, n, u = sol["m"][positive], sol["n"][positive], sol["u"][positive]
    num, den, d = sol["num"][positive], sol["den"][positive], sol["d"][positive]
    x, r, eps = sol["x"][positive], sol["r"][positive], sol["eps"][positive]
    C = conf[positive]
    active = eps > RESIDUAL_FLOOR
    # dC/deps * deps/dr, zero where the residual vanishes
    coef = np.where(active, -C / (sigma * np.where(active, eps, 1.0)), 0.0)

    qk = q[positive]
    dRs = rotation_jacobians(pose.as_vector()[:3])
    zeros3 = np.zeros(3)
    for k in range(6):
        if k < 3:
            da = qk @ (Ks @ dRs[k]).T
            db = zeros3
        else:
            da = np.zeros_like(a)
            db = Ks[:, k - 3]
        dm = da[:, :2] - da[:, 2:3] * ppk
        dn = db[2] * ppk - db[:2]
        if method == "algebraic":
            du = dm
        else:
            du = db[2] * a[:, :2] + b[2] * da[:, :2] - da[:, 2:3] * b[:2] - a[:, 2:3] * db[:2]
        dnum = np.einsum("ij,ij->i", du, n) + np.einsum("ij,ij->i", u, dn)
        dden = np.einsum("ij,ij->i", du, m) + np.einsum("ij,ij->i", u, dm)
        dd = (dnum * den - num * dden) / den**2
        dx = dd[:, None] * a + d[:, None] * da + db
        x3 = x[:, 2:3]
        dproj = (dx[:, :2] * x3 - x[:, :2] * dx[:, 2:3]) / x3**2
        grad[k] = np.sum(coef * np.einsum("ij,ij->i", r, dproj))
    return value, grad


def confidence_gradient_wrt_pose(flow, K, pose, K_source=None, params=None, method="reprojection"):
    """Gradient of the summed confidence with respect to ``(omega, t)``."""
    return confidence_objective(flow, K, pose, K_source, params, method, gradient=True)[1]
