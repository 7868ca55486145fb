"""End-to-end processing of a frame sequence on disk.

Directory layout (all names relative to the config file):

* ``flow_dir/{t:06d}_{s:06d}.flo`` -- flow from target ``t`` to source ``s``
* ``gt_dir/{t:06d}.png`` or ``.depth`` -- optional ground truth
* each external dir: ``{t:06d}.png`` or ``.depth`` plus an optional
  ``{t:06d}.conf.depth`` confidence map
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import io
from ._config import parse_bool, parse_floats, parse_kv
from .errors import BadConfig, NoValidSource
from .fusion import ExternalProposal, FusionConfig, fuse_proposals, select_source_frames
from .geometry import METHODS, ConfidenceParams, flow_to_depth
from .metrics import evaluate, mean_report
from .pose_refine import RefinementConfig, refine_pose
from .viz import confidence_to_image, depth_to_image, save_image

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    poses: str
    intrinsics: str
    flow_dir: str
    output_dir: str
    gt_dir: str | None = None
    external_dirs: list = field(default_factory=list)
    targets: list | None = None
    confidence: ConfidenceParams = field(default_factory=ConfidenceParams)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    refine: bool = False
    visualize: bool = False
    silog_scaled: bool = False
    method: str = "reprojection"
    workers: int = 1


_PATH_KEYS = ("poses", "intrinsics", "flow_dir", "gt_dir", "output_dir")


def load_pipeline_config(path):
    with open(path) as fh:
        kv = parse_kv(fh.read())
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    known = set(_PATH_KEYS) | {
        "external_dirs", "targets", "sigma", "refine", "max_iterations", "gradient_tolerance",
        "objective_tolerance", "translation_threshold", "min_confidence",
        "external_default_confidence", "depth_cap", "visualize", "silog_scaled", "method", "workers",
    }
    unknown = set(kv) - known
    if unknown:
        raise BadConfig(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("poses", "intrinsics", "flow_dir", "output_dir"):
        if key not in kv:
            raise BadConfig(f"{path}: missing required key {key!r}")
    try:
        cfg = PipelineConfig(
            poses=resolve(kv["poses"]),
            intrinsics=resolve(kv["intrinsics"]),
            flow_dir=resolve(kv["flow_dir"]),
            output_dir=resolve(kv["output_dir"]),
            gt_dir=resolve(kv["gt_dir"]) if kv.get("gt_dir") else None,
            external_dirs=[resolve(p.strip()) for p in kv.get("external_dirs", "").split(",") if p.strip()],
            targets=None
            if kv.get("targets", "all").strip() == "all"
            else [int(v) for v in parse_floats(kv["targets"])],
            confidence=ConfidenceParams(float(kv.get("sigma", 20.0))),
            refinement=RefinementConfig(
                max_iterations=int(kv.get("max_iterations", 100)),
                gradient_tolerance=float(kv.get("gradient_tolerance", 1e-6)),
                objective_tolerance=float(kv.get("objective_tolerance", 1e-9)),
            ),
            fusion=FusionConfig(
                translation_threshold=float(kv.get("translation_threshold", 0.8)),
                min_confidence=float(kv.get("min_confidence", 0.05)),
                external_default_confidence=float(kv.get("external_default_confidence", 0.5)),
                depth_cap=float(kv.get("depth_cap", 80.0)),
            ),
            refine=parse_bool(kv.get("refine", "false")),
            visualize=parse_bool(kv.get("visualize", "false")),
            silog_scaled=parse_bool(kv.get("silog_scaled", "false")),
            method=kv.get("method", "reprojection"),
            workers=int(kv.get("workers", 1)),
        )
    except ValueError as exc:
        raise BadConfig(f"{path}: {exc}") from None
    if cfg.method not in METHODS:
        raise BadConfig(f"{path}: unknown method {cfg.method!r}")
    if cfg.workers < 1:
        raise BadConfig(f"{path}: workers must be >= 1")
    for p in [cfg.poses, cfg.intrinsics, cfg.flow_dir, cfg.gt_dir, *cfg.external_dirs]:
        if p is not None and not os.path.exists(p):
            raise BadConfig(f"{path}: referenced path does not exist: {p}")
    return cfg


def _find_depth(directory, stem):
    for ext in (".depth", ".png"):
        p = os.path.join(directory, stem + ext)
        if os.path.exists(p):
            return p
    return None


@dataclass
class TargetResult:
    target: int
    depth: np.ndarray
    sources: list
    refinements: dict
    report: object = None


def process_target(cfg, seq, K, t):
    pos = seq.position(t)
    k1, k2 = select_source_frames(seq, pos, cfg.fusion.translation_threshold)
    sources = [int(seq.indices[pos + sign * k]) for sign, k in ((-1, k1), (1, k2)) if k is not None]
    prop_dir = os.path.join(cfg.output_dir, "proposals")
    os.makedirs(prop_dir, exist_ok=True)

    proposals, used, refinements = [], [], {}
    for s in sources:
        flow_path = os.path.join(cfg.flow_dir, f"{t:06d}_{s:06d}.flo")
        if not os.path.exists(flow_path):
            log.warning("target %d: no flow file for source %d (%s)", t, s, flow_path)
            continue
        flow = io.read_flow(flow_path)
        pose = seq.relative_pose(t, s)
        if cfg.refine:
            res = refine_pose(flow, K, pose, cfg.confidence, cfg.refinement, method=cfg.method)
            pose = res.refined_pose
            refinements[s] = res
            io.write_relative_pose(os.path.join(prop_dir, f"{t:06d}_{s:06d}.pose.txt"), pose)
        prop = flow_to_depth(flow, K, pose, params=cfg.confidence, method=cfg.method)
        stem = os.path.join(prop_dir, f"{t:06d}_{s:06d}")
        io.write_depth(stem + ".depth", np.where(prop.positive_mask, prop.depth, 0.0))
        io.write_depth(stem + ".conf.depth", prop.confidence)
        if cfg.visualize:
            save_image(stem + ".conf.png", confidence_to_image(prop.confidence))
            save_image(stem + ".viz.png", depth_to_image(np.where(prop.positive_mask, prop.depth, 0.0), cfg.fusion.depth_cap))
        proposals.append(prop)
        used.append(s)

    for d in cfg.external_dirs:
        p = _find_depth(d, f"{t:06d}")
        if p is None:
            log.warning("target %d: no external proposal in %s", t, d)
            continue
        conf_path = os.path.join(d, f"{t:06d}.conf.depth")
        conf = io.read_depth(conf_path) if os.path.exists(conf_path) else None
        proposals.append(ExternalProposal(io.read_depth(p), conf))

    if not proposals:
        raise NoValidSource("both", f"target {t}: no usable proposal")
    fused = fuse_proposals(proposals, cfg.fusion)
    io.write_depth(os.path.join(cfg.output_dir, f"{t:06d}.depth"), fused)
    if cfg.visualize:
        save_image(os.path.join(cfg.output_dir, f"{t:06d}.viz.png"), depth_to_image(fused, cfg.fusion.depth_cap))

    report = None
    if cfg.gt_dir:
        gt_path = _find_depth(cfg.gt_dir, f"{t:06d}")
        if gt_path is not None:
            report = evaluate(fused, io.read_depth(gt_path), cfg.fusion.depth_cap,
                              silog_scale=100.0 if cfg.silog_scaled else 1.0)
    return TargetResult(t, fused, used, refinements, report)


def run_pipeline(cfg):
    seq = io.read_poses(cfg.poses)
    K = io.read_intrinsics(cfg.intrinsics)
    targets = list(seq.indices) if cfg.targets is None else cfg.targets
    os.makedirs(cfg.output_dir, exist_ok=True)

    def work(t):
        return process_target(cfg, seq, K, int(t))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, targets))
    else:
        results = [work(t) for t in targets]

    reports = [r.report for r in results if r.report is not None]
    if reports:
        lines = []
        for r in results:
            if r.report is not None:
                lines.append(f"# target {r.target}\n{r.report.format_kv()}")
        lines.append(f"# mean\n{mean_report(reports).format_kv()}")
        with open(os.path.join(cfg.output_dir, "metrics.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return results
