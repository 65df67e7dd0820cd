"""Command-line front end.

    segrefine run         full pipeline on one manifest (or a directory)
    segrefine superpixels superpixel map of the bundle image
    segrefine caf         attention-fusion stage dump
    segrefine diffuse     cross-graph diffusion from a caf stage dump
    segrefine solve       convex fusion from a diffusion stage dump
    segrefine eval        metrics from a predicted and a reference label map

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. SEGREFINE_THREADS caps the worker pool in directory mode.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import metrics as metrics_mod
from .config import PipelineConfig, parse_config
from .diffusion import refine_bidirectional
from .errors import CONFIG_ERRORS, NUMERICAL_ERRORS, SegRefineError, StageFailure
from .pipeline import (
    build_graphs,
    dump_diffusion_stage,
    dump_fusion_stage,
    fuse_probabilities,
    load_diffusion_stage,
    load_fusion_stage,
    run_batch,
    run_pipeline,
    write_label_png,
    write_segment_png,
)
from .superpixels import segment_felzenszwalb
from .tensorio import load_bundle, read_tensor, write_tensor
from .attention_fusion import run_caf
from .tv_fusion import argmax_labels


def _load_config(path) -> PipelineConfig:
    return parse_config(path) if path else PipelineConfig()


def _cmd_run(args) -> None:
    config = _load_config(args.config)
    if os.path.isdir(args.manifest):
        threads = os.environ.get("SEGREFINE_THREADS")
        run_batch(args.manifest, config, args.out, gt_dir=args.gt,
                  debug=args.debug, threads=int(threads) if threads else None)
        return
    result = run_pipeline(args.manifest, config, args.out,
                          gt_path=args.gt, debug=args.debug)
    if result.metrics is not None:
        print(json.dumps(result.metrics, indent=2, sort_keys=True))


def _cmd_superpixels(args) -> None:
    config = _load_config(args.config)
    bundle = load_bundle(args.manifest)
    sp = segment_felzenszwalb(bundle.image, config.superpixel.scale,
                              config.superpixel.min_size, config.superpixel.sigma)
    os.makedirs(args.out, exist_ok=True)
    write_tensor(os.path.join(args.out, "superpixels.stf"), sp.labels)
    write_segment_png(os.path.join(args.out, "superpixels.png"), sp)
    print(f"{sp.num_segments} segments -> {args.out}")


def _cmd_caf(args) -> None:
    config = _load_config(args.config)
    bundle = load_bundle(args.manifest)
    fused = run_caf(bundle, config.lambda1)
    dump_fusion_stage(args.out, fused, bundle.class_names)
    print(f"fused scores on grid {fused.s_clip.grid} -> {args.out}")


def _cmd_diffuse(args) -> None:
    config = _load_config(args.config)
    fused, class_names = load_fusion_stage(args.stage)
    t_clip, t_dino = build_graphs(fused, config)
    s_g_clip, s_g_dino = refine_bidirectional(
        t_clip, t_dino, fused.s_clip, fused.s_dino, config.diffusion)
    dump_diffusion_stage(args.out, s_g_clip, s_g_dino, class_names)
    print(f"diffused scores -> {args.out}")


def _cmd_solve(args) -> None:
    config = _load_config(args.config)
    s_g_clip, s_g_dino, class_names = load_diffusion_stage(args.stage)
    bundle = load_bundle(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    q, _sp = fuse_probabilities(s_g_clip, s_g_dino, bundle.image, config,
                                debug_dir=args.out if args.debug else None)
    labels = argmax_labels(q)
    write_tensor(os.path.join(args.out, "q.stf"), q.values.astype(np.float32))
    write_tensor(os.path.join(args.out, "labels.stf"), labels)
    write_label_png(os.path.join(args.out, "labels.png"), labels, len(class_names))
    print(f"label map -> {args.out}")


def _cmd_eval(args) -> None:
    pred = read_tensor(args.pred)
    gt = read_tensor(args.gt)
    if args.manifest:
        class_names = load_bundle(args.manifest).class_names
    else:
        kept = gt[gt != args.ignore_index]
        highest = max(int(pred.max()), int(kept.max()) if kept.size else 0)
        class_names = [f"class_{i}" for i in range(highest + 1)]
    cm = metrics_mod.ConfusionMatrix(num_classes=len(class_names),
                                     ignore_index=args.ignore_index)
    cm = metrics_mod.accumulate(cm, pred, gt)
    payload = metrics_mod.metrics_dict(cm, class_names)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segrefine", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline")
    run.add_argument("--manifest", required=True,
                     help="bundle manifest (or a directory of manifests)")
    run.add_argument("--config", help="JSON config; defaults apply when omitted")
    run.add_argument("--out", required=True)
    run.add_argument("--gt", help="ground-truth STF1 i64 label map (or directory)")
    run.add_argument("--debug", action="store_true",
                     help="dump per-stage artifacts and the convergence log")
    run.set_defaults(func=_cmd_run)

    sp = sub.add_parser("superpixels", help="superpixel map of the bundle image")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_superpixels)

    caf = sub.add_parser("caf", help="attention-fusion stage dump")
    caf.add_argument("--manifest", required=True)
    caf.add_argument("--config")
    caf.add_argument("--out", required=True)
    caf.set_defaults(func=_cmd_caf)

    diff = sub.add_parser("diffuse", help="cross-graph diffusion of a caf dump")
    diff.add_argument("--stage", required=True, help="caf stage directory")
    diff.add_argument("--config")
    diff.add_argument("--out", required=True)
    diff.set_defaults(func=_cmd_diffuse)

    solve = sub.add_parser("solve", help="convex fusion of a diffusion dump")
    solve.add_argument("--stage", required=True, help="diffusion stage directory")
    solve.add_argument("--manifest", required=True,
                       help="bundle manifest (for the image and class names)")
    solve.add_argument("--config")
    solve.add_argument("--out", required=True)
    solve.add_argument("--debug", action="store_true")
    solve.set_defaults(func=_cmd_solve)

    ev = sub.add_parser("eval", help="IoU metrics for a predicted label map")
    ev.add_argument("--pred", required=True, help="predicted labels, STF1 i64")
    ev.add_argument("--gt", required=True, help="reference labels, STF1 i64")
    ev.add_argument("--manifest", help="bundle manifest supplying class names")
    ev.add_argument("--ignore-index", type=int, default=255)
    ev.add_argument("--out", help="write metrics JSON here as well")
    ev.set_defaults(func=_cmd_eval)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageFailure):
        return _exit_code(exc.cause)
    if isinstance(exc, CONFIG_ERRORS):
        return 2
    if isinstance(exc, NUMERICAL_ERRORS):
        return 4
    return 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (SegRefineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
