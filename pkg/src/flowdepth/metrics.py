"""Standard depth-evaluation metrics.

``pred`` is the estimate, ``gt`` the (possibly sparse) reference; pixels with
``gt <= 0`` or non-finite ``gt`` carry no ground truth.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch, NoGroundTruth

METRIC_NAMES = ("abs_rel", "sq_rel", "rms", "log_rms", "irmse", "silog", "delta1", "delta2", "delta3")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rms: float
    log_rms: float
    irmse: float
    silog: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int

    def as_dict(self):
        return asdict(self)

    def format_table(self):
        head = " ".join(f"{n:>8s}" for n in METRIC_NAMES)
        row = " ".join(f"{getattr(self, n):8.3f}" for n in METRIC_NAMES)
        return f"{head}\n{row}"

    def format_kv(self):
        lines = [f"{n}={getattr(self, n)!r}" for n in METRIC_NAMES]
        lines.append(f"n_pixels={self.n_pixels}")
        return "\n".join(lines)


def support_mask(gt):
    gt = np.asarray(gt, dtype=float)
    return np.isfinite(gt) & (gt > 0)


def evaluate(pred, gt, depth_cap=80.0, min_depth=1e-3, silog_scale=1.0):
    """Compute the metric suite over the ground-truth support.

    Predictions are clamped to ``[min_depth, depth_cap]`` first. SIlog is the
    standard deviation of the log error; pass ``silog_scale=100`` for the
    benchmark's display convention.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if not min_depth < depth_cap:
        raise ValueError("min_depth must be below depth_cap")
    mask = support_mask(gt)
    if not mask.any():
        raise NoGroundTruth("ground truth has no valid pixel")
    g = gt[mask]
    p = pred[mask]
    if not np.all(np.isfinite(p)):
        raise ValueError("prediction is not finite on the ground-truth support")
    p = np.clip(p, min_depth, depth_cap)

    diff = p - g
    log_err = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    # sqrt(E[e^2] - E[e]^2), evaluated in the centred (cancellation-free) form
    silog = np.std(log_err)

    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rms=float(np.sqrt(np.mean(diff**2))),
        log_rms=float(np.sqrt(np.mean(log_err**2))),
        irmse=float(np.sqrt(np.mean((1.0 / p - 1.0 / g) ** 2))),
        silog=float(silog * silog_scale),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        n_pixels=int(mask.sum()),
    )


def mean_report(reports):
    """Pixel-count-agnostic average of several reports (one per image)."""
    if not reports:
        raise ValueError("no reports to average")
    vals = {n: float(np.mean([getattr(r, n) for r in reports])) for n in METRIC_NAMES}
    return MetricReport(**vals, n_pixels=int(sum(r.n_pixels for r in reports)))
