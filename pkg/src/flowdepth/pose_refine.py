"""Relative-pose refinement by maximising the summed confidence map.

The pose is optimised over the 6-vector chart ``(omega, t)`` with SciPy's
L-BFGS-B (descent on the negated objective). Rotation coordinates are boxed,
translation is free. Because triangulated depth scales with the baseline the
objective is invariant to the length of ``t``; only its direction (and the
rotation) is observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import NonFiniteObjective
from .geometry import ConfidenceParams, RelativePose, confidence_objective


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    rotation_bounds: tuple = (-np.pi, np.pi)
    objective_tolerance: float = 1e-9
    memory: int = 10
    finite_differences: bool = False
    fd_step: float = 1e-6
    # optimiser units: radians for rotation, fraction of the initial
    # baseline length for translation
    rotation_scale: float = 1e-2
    translation_scale: float = 1e-2
    max_restarts: int = 5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        lo, hi = self.rotation_bounds
        if not lo < hi:
            raise ValueError(f"rotation bounds must satisfy lower < upper, got {self.rotation_bounds}")
        if self.gradient_tolerance < 0 or self.objective_tolerance < 0:
            raise ValueError("tolerances must be non-negative")
        if self.rotation_scale <= 0 or self.translation_scale <= 0:
            raise ValueError("variable scales must be positive")


@dataclass
class RefinementResult:
    refined_pose: RelativePose
    initial_objective: float
    final_objective: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)  # (objective, gradient norm) per iteration
    message: str = ""


def refinement_objective(flow, K, pose, params=None, K_source=None, method="reprojection"):
    """Sum of the confidence map over positive-depth pixels."""
    return confidence_objective(flow, K, pose, K_source, params, method, gradient=False)[0]


def _fd_gradient(f, x, h):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def refine_pose(flow, K, initial_pose, params=None, cfg=None, K_source=None, method="reprojection"):
    """Refine ``initial_pose`` so that the flow is as consistent as possible
    with rigid two-view geometry.

    The returned pose is the best one evaluated, so the final objective is
    never below the initial one. Raises :class:`NonFiniteObjective` if the
    objective or its gradient is not finite.
    """
    params = params or ConfidenceParams()
    cfg = cfg or RefinementConfig()
    x0 = initial_pose.as_vector()
    lo, hi = cfg.rotation_bounds
    if np.any(x0[:3] < lo) or np.any(x0[:3] > hi):
        raise ValueError("initial rotation lies outside the rotation bounds")

    baseline = float(np.linalg.norm(x0[3:]))
    scale = np.array([cfg.rotation_scale] * 3 + [cfg.translation_scale * (baseline or 1.0)] * 3)

    cache = {}
    best = {"x": x0.copy(), "value": -np.inf}

    def value_only(x):
        pose = RelativePose.from_vector(x)
        return confidence_objective(flow, K, pose, K_source, params, method, gradient=False)[0]

    def evaluate(x):
        key = x.tobytes()
        if key in cache:
            return cache[key]
        pose = RelativePose.from_vector(x)
        if cfg.finite_differences:
            value = confidence_objective(flow, K, pose, K_source, params, method, gradient=False)[0]
            grad = _fd_gradient(value_only, x, cfg.fd_step)
        else:
            value, grad = confidence_objective(flow, K, pose, K_source, params, method)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NonFiniteObjective(f"objective {value} / gradient {grad} at pose {x}")
        if value > best["value"]:
            best["x"], best["value"] = x.copy(), value
        cache.clear()
        cache[key] = (value, grad)
        return value, grad

    def fun(z):
        value, grad = evaluate(np.asarray(z, dtype=float) * scale)
        return -value, -grad * scale

    initial_value, initial_grad = evaluate(x0)
    trace = [(initial_value, float(np.linalg.norm(initial_grad)))]

    def callback(intermediate_result):
        value, grad = evaluate(np.asarray(intermediate_result.x, dtype=float) * scale)
        trace.append((value, float(np.linalg.norm(grad))))

    bounds = [(lo / scale[0], hi / scale[0])] * 3 + [(None, None)] * 3
    # L-BFGS zig-zags into the kink at a noiseless maximum and then stops on
    # the relative-reduction test; restarting from the best point with fresh
    # curvature memory continues the ascent. Restarts share the iteration
    # budget and stop once a run no longer improves the objective.
    iterations = 0
    converged = False
    message = ""
    for _ in range(cfg.max_restarts + 1):
        start_value = best["value"]
        res = minimize(
            fun,
            best["x"] / scale,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=callback,
            options=dict(
                maxiter=cfg.max_iterations - iterations,
                maxcor=cfg.memory,
                gtol=cfg.gradient_tolerance,
                ftol=cfg.objective_tolerance,
            ),
        )
        iterations += int(res.nit)
        message = str(res.message)
        # status 2 is a stalled line search: no ascent direction is left at
        # float precision, which is how a kinked maximum presents itself
        converged = res.status in (0, 2)
        gain = best["value"] - start_value
        if res.status == 1 or iterations >= cfg.max_iterations:
            converged = False
            break
        if gain <= cfg.objective_tolerance * max(abs(best["value"]), 1.0):
            break
    x_best = best["x"]
    return RefinementResult(
        refined_pose=RelativePose.from_vector(x_best),
        initial_objective=initial_value,
        final_objective=best["value"],
        iterations=iterations,
        converged=bool(converged),
        trace=trace,
        message=message,
    )
