"""Command-line front end: ``flowdepth <subcommand> ...``.

Exit status is 0 on success. Failures print one ``error: ...`` line to
stderr and exit with the error class's code (3 for malformed or unreadable
files, 4 for geometric failures, 5 for a non-finite objective, 6 for
missing sources or data).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .errors import FlowDepthError
from .fusion import ExternalProposal, FrameSequence, FusionConfig, fuse_proposals
from .geometry import METHODS, ConfidenceParams, DepthProposal, flow_to_depth
from .metrics import evaluate
from .pipeline import load_pipeline_config, run_pipeline
from .pose_refine import RefinementConfig, refine_pose
from .synth import SyntheticScene, format_scene, parse_scene, render
from .viz import confidence_to_image, depth_to_image, save_image

def _pose_inputs(args):
    flow = io.read_flow(args.flow)
    K = io.read_intrinsics(args.intrinsics)
    pose = io.read_relative_pose(args.pose)
    return flow, K, pose


def cmd_depth(args):
    flow, K, pose = _pose_inputs(args)
    prop = flow_to_depth(flow, K, pose, params=ConfidenceParams(args.sigma), method=args.method)
    io.write_depth(args.out_depth, np.where(prop.positive_mask, prop.depth, 0.0))
    io.write_depth(args.out_confidence, prop.confidence)
    n = int(prop.positive_mask.sum())
    print(f"positive_pixels={n} mean_confidence={float(prop.confidence.mean())!r}")


def cmd_refine(args):
    flow, K, pose = _pose_inputs(args)
    cfg = RefinementConfig(max_iterations=args.max_iterations, gradient_tolerance=args.gradient_tolerance)
    res = refine_pose(flow, K, pose, ConfidenceParams(args.sigma), cfg, method=args.method)
    io.write_relative_pose(args.out, res.refined_pose)
    lines = ["# iteration objective gradient_norm"]
    lines += [f"{i} {v!r} {g!r}" for i, (v, g) in enumerate(res.trace)]
    text = "\n".join(lines) + "\n"
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(
        f"initial_objective={res.initial_objective!r} final_objective={res.final_objective!r} "
        f"iterations={res.iterations} converged={res.converged}"
    )


def _split_pair(value):
    depth, _, conf = value.partition(",")
    return depth, (conf or None)


def cmd_fuse(args):
    proposals = []
    for spec in args.proposal:
        depth_path, conf_path = _split_pair(spec)
        depth = io.read_depth(depth_path)
        conf = io.read_depth(conf_path) if conf_path else np.ones_like(depth)
        positive = np.isfinite(depth) & (depth > 0)
        proposals.append(DepthProposal(np.where(positive, depth, 0.0), conf, positive, None))
    for spec in args.external:
        depth_path, conf_path = _split_pair(spec)
        proposals.append(
            ExternalProposal(io.read_depth(depth_path), io.read_depth(conf_path) if conf_path else None)
        )
    cfg = FusionConfig(
        min_confidence=args.min_confidence,
        external_default_confidence=args.external_confidence,
        depth_cap=args.depth_cap,
    )
    io.write_depth(args.out, fuse_proposals(proposals, cfg))


def cmd_eval(args):
    report = evaluate(
        io.read_depth(args.pred),
        io.read_depth(args.gt),
        depth_cap=args.depth_cap,
        silog_scale=100.0 if args.silog_scaled else 1.0,
    )
    print(report.format_table())
    print()
    print(report.format_kv())


def cmd_synth(args):
    if args.scene:
        with open(args.scene) as fh:
            scene, seed = parse_scene(fh.read())
    else:
        scene, seed = SyntheticScene(), 0
    if args.seed is not None:
        seed = args.seed
    flow, gt, pose = render(scene, seed)

    out = args.out
    for sub in ("flow", "gt"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    io.write_flow(os.path.join(out, "flow", "000000_000001.flo"), flow)
    # ground truth only where the flow says the point is seen by both views
    io.write_depth(os.path.join(out, "gt", "000000.depth"), np.where(flow.valid, gt, 0.0))
    io.write_intrinsics(os.path.join(out, "intrinsics.txt"), scene.intrinsics.with_size(scene.width, scene.height))
    # frame 0 is the world frame; frame 1's world-from-camera is the inverse
    # of the target-to-source transform
    source = pose.inverse()
    seq = FrameSequence(
        np.array([np.zeros(3), source.translation]),
        np.array([np.eye(3), source.rotation]),
    )
    io.write_poses(os.path.join(out, "poses.txt"), seq)
    io.write_relative_pose(os.path.join(out, "pose.txt"), pose)
    with open(os.path.join(out, "scene.txt"), "w") as fh:
        fh.write(format_scene(scene, seed))
    baseline = float(np.linalg.norm(pose.translation))
    threshold = min(0.8, 0.5 * baseline) if baseline > 0 else 0.8
    with open(os.path.join(out, "pipeline.cfg"), "w") as fh:
        fh.write(
            "poses = poses.txt\n"
            "intrinsics = intrinsics.txt\n"
            "flow_dir = flow\n"
            "gt_dir = gt\n"
            "output_dir = out\n"
            "targets = 0\n"
            f"translation_threshold = {threshold!r}\n"
        )
    print(f"valid_pixels={int(flow.valid.sum())} written to {out}")


def cmd_pipeline(args):
    cfg = load_pipeline_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        cfg.workers = args.workers
    results = run_pipeline(cfg)
    for r in results:
        line = f"target={r.target} sources={','.join(map(str, r.sources)) or '-'}"
        if r.report is not None:
            line += f" abs_rel={r.report.abs_rel:.6g} delta1={r.report.delta1:.6g}"
        print(line)


def cmd_viz(args):
    data = io.read_depth(args.input)
    if args.kind == "confidence":
        img = confidence_to_image(data)
    else:
        img = depth_to_image(data, args.depth_cap)
    save_image(args.out, img)


def build_parser():
    parser = argparse.ArgumentParser(prog="flowdepth", description="Depth from optical flow and camera pose.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def pose_args(p):
        p.add_argument("--flow", required=True, help=".flo file, target -> source")
        p.add_argument("--intrinsics", required=True, help="fx fy cx cy text file")
        p.add_argument("--pose", required=True, help="one-line [R|t] target-to-source pose")
        p.add_argument("--sigma", type=float, default=20.0, help="confidence scale in pixels")
        p.add_argument("--method", choices=METHODS, default="reprojection")

    p = sub.add_parser("depth", help="triangulate a depth proposal and confidence map")
    pose_args(p)
    p.add_argument("--out-depth", required=True)
    p.add_argument("--out-confidence", required=True)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("refine", help="refine a relative pose against a flow field")
    pose_args(p)
    p.add_argument("--out", required=True, help="refined pose file")
    p.add_argument("--trace", help="write the objective trace here (default stdout)")
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--gradient-tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("fuse", help="fuse depth proposals into one depth map")
    p.add_argument("--proposal", action="append", default=[], metavar="DEPTH[,CONF]")
    p.add_argument("--external", action="append", default=[], metavar="DEPTH[,CONF]")
    p.add_argument("--out", required=True)
    p.add_argument("--min-confidence", type=float, default=0.05)
    p.add_argument("--external-confidence", type=float, default=0.5)
    p.add_argument("--depth-cap", type=float, default=80.0)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="depth metrics of a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--depth-cap", type=float, default=80.0)
    p.add_argument("--silog-scaled", action="store_true", help="report SIlog x 100")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic two-view scene to disk")
    p.add_argument("--scene", help="key = value scene description (default: built-in plane)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run the whole pipeline from a config file")
    p.add_argument("config")
    p.add_argument("--workers", type=int, help="override the config's worker count")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("viz", help="8-bit rendering of a depth or confidence map")
    p.add_argument("kind", choices=("depth", "confidence"))
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--depth-cap", type=float, default=80.0)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except FlowDepthError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
