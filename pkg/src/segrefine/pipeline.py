"""End-to-end orchestration of the refinement pipeline for one image.

Stage order: load bundle -> attention fusion -> transition graphs ->
cross-graph diffusion -> per-pixel probabilities -> superpixels + edge
weights -> target collapse -> convex TV solve -> argmax labels (+ metrics
when ground truth is supplied). Every failure is re-raised wrapped with
the stage name so the CLI can report where things went wrong.

Each stage's artifacts can be dumped to disk (always for the stage
subcommands, under out/debug for full runs with debug enabled) and fed
back into the next stage; the stage files are ordinary STF1 tensors plus
a small JSON sidecar carrying grid geometry and class names.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import metrics as metrics_mod
from .attention_fusion import FusedScores, ScoreMap, run_caf
from .config import PipelineConfig
from .diffusion import refine_bidirectional
from .errors import GeometryMismatch, SegRefineError, StageFailure
from .superpixels import SuperpixelMap, build_edge_weights, segment_felzenszwalb
from .tensorio import load_bundle, read_tensor, write_tensor
from .transition import build_transition, mean_features
from .tv_fusion import (
    ProbabilityField,
    argmax_labels,
    collapse_kl_targets,
    scores_to_probs,
    solve_pdhg,
)


@dataclass(frozen=True)
class PipelineResult:
    labels: np.ndarray
    metrics: dict | None
    label_png: str
    label_stf: str
    metrics_path: str | None


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except (SegRefineError, OSError, ValueError) as exc:
        raise StageFailure(name, exc) from exc


def class_palette(num_classes: int) -> np.ndarray:
    """Deterministic 256-entry RGB palette; hue walks the golden angle."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for i in range(min(num_classes, 256)):
        hue = (i * 0.61803398875) % 1.0
        palette[i] = _hsv_to_rgb(hue, 0.65, 0.95)
    return palette


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return tuple(int(round(255 * c)) for c in rgb)


def write_label_png(path, labels: np.ndarray, num_classes: int) -> None:
    """Palette-indexed PNG of a label map (class ids must fit in a byte)."""
    if num_classes > 256:
        raise GeometryMismatch("palette PNG supports at most 256 classes")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(class_palette(num_classes).ravel().tolist())
    img.save(path, format="PNG")


def write_segment_png(path, sp: SuperpixelMap) -> None:
    """RGB visualization of a superpixel map with fixed pseudo-random colors."""
    rng = np.random.default_rng(0)
    colors = rng.integers(0, 256, size=(sp.num_segments, 3), dtype=np.uint8)
    Image.fromarray(colors[sp.labels], mode="RGB").save(path, format="PNG")


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- stage artifact files ----------------------------------------------------

def dump_fusion_stage(out_dir, fused: FusedScores, class_names) -> None:
    os.makedirs(out_dir, exist_ok=True)
    grid = fused.s_clip.grid
    write_tensor(os.path.join(out_dir, "s_clip.stf"),
                 fused.s_clip.values.astype(np.float32))
    write_tensor(os.path.join(out_dir, "s_dino.stf"),
                 fused.s_dino.values.astype(np.float32))
    write_tensor(os.path.join(out_dir, "clip_stack.stf"),
                 fused.clip_stack.astype(np.float32))
    write_tensor(os.path.join(out_dir, "dino_stack.stf"),
                 fused.dino_stack.astype(np.float32))
    _write_json(os.path.join(out_dir, "stage.json"),
                {"grid": list(grid), "class_names": list(class_names)})


def load_fusion_stage(stage_dir) -> tuple[FusedScores, list[str]]:
    with open(os.path.join(stage_dir, "stage.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    grid = tuple(meta["grid"])
    fused = FusedScores(
        s_clip=ScoreMap(read_tensor(os.path.join(stage_dir, "s_clip.stf"))
                        .astype(np.float64), grid),
        s_dino=ScoreMap(read_tensor(os.path.join(stage_dir, "s_dino.stf"))
                        .astype(np.float64), grid),
        clip_stack=read_tensor(os.path.join(stage_dir, "clip_stack.stf"))
        .astype(np.float64),
        dino_stack=read_tensor(os.path.join(stage_dir, "dino_stack.stf"))
        .astype(np.float64),
    )
    return fused, list(meta["class_names"])


def dump_diffusion_stage(out_dir, s_g_clip: ScoreMap, s_g_dino: ScoreMap,
                         class_names) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_tensor(os.path.join(out_dir, "s_g_clip.stf"),
                 s_g_clip.values.astype(np.float32))
    write_tensor(os.path.join(out_dir, "s_g_dino.stf"),
                 s_g_dino.values.astype(np.float32))
    _write_json(os.path.join(out_dir, "stage.json"),
                {"grid": list(s_g_clip.grid), "class_names": list(class_names)})


def load_diffusion_stage(stage_dir) -> tuple[ScoreMap, ScoreMap, list[str]]:
    with open(os.path.join(stage_dir, "stage.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    grid = tuple(meta["grid"])
    s_g_clip = ScoreMap(read_tensor(os.path.join(stage_dir, "s_g_clip.stf"))
                        .astype(np.float64), grid)
    s_g_dino = ScoreMap(read_tensor(os.path.join(stage_dir, "s_g_dino.stf"))
                        .astype(np.float64), grid)
    return s_g_clip, s_g_dino, list(meta["class_names"])


# --- stage computations -------------------------------------------------------

def build_graphs(fused: FusedScores, config: PipelineConfig):
    t_clip = build_transition(mean_features(fused.clip_stack),
                              config.graph.k, config.graph.tau, fused.s_clip.grid)
    t_dino = build_transition(mean_features(fused.dino_stack),
                              config.graph.k, config.graph.tau, fused.s_dino.grid)
    return t_clip, t_dino


def fuse_probabilities(s_g_clip: ScoreMap, s_g_dino: ScoreMap, image: np.ndarray,
                       config: PipelineConfig, debug_dir=None):
    """Pixel probabilities, superpixel weights, and the convex solve."""
    size = (image.shape[0], image.shape[1])
    solver = config.cscp
    p_clip = scores_to_probs(s_g_clip, size, solver.softmax_temp, solver.eps_floor)
    p_dino = scores_to_probs(s_g_dino, size, solver.softmax_temp, solver.eps_floor)
    sp = segment_felzenszwalb(image, config.superpixel.scale,
                              config.superpixel.min_size, config.superpixel.sigma)
    weights = build_edge_weights(sp, config.superpixel.w_in, config.superpixel.w_cross)
    target, lambda_total = collapse_kl_targets(p_clip, p_dino,
                                               solver.lambda_c, solver.lambda_d)
    on_iteration = None
    log_rows = []
    if debug_dir is not None:
        def on_iteration(i, energy, change, _q, _yh, _yv):
            log_rows.append((i, energy, change))
    q = solve_pdhg(target, lambda_total, weights, solver, on_iteration=on_iteration)
    if debug_dir is not None:
        os.makedirs(debug_dir, exist_ok=True)
        with open(os.path.join(debug_dir, "solver_convergence.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "energy", "primal_change"])
            writer.writerows(log_rows)
    return q, sp


def run_pipeline(bundle_manifest, config: PipelineConfig, out_dir,
                 gt_path=None, debug: bool = False) -> PipelineResult:
    """Run every stage on one bundle and write the outputs into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    debug_dir = os.path.join(out_dir, "debug") if debug else None

    with _stage("load_bundle"):
        bundle = load_bundle(bundle_manifest)
    with _stage("caf"):
        fused = run_caf(bundle, config.lambda1)
        if debug_dir:
            dump_fusion_stage(os.path.join(debug_dir, "caf"), fused, bundle.class_names)
    with _stage("graph"):
        t_clip, t_dino = build_graphs(fused, config)
    with _stage("diffuse"):
        s_g_clip, s_g_dino = refine_bidirectional(
            t_clip, t_dino, fused.s_clip, fused.s_dino, config.diffusion)
        if debug_dir:
            dump_diffusion_stage(os.path.join(debug_dir, "diffusion"),
                                 s_g_clip, s_g_dino, bundle.class_names)
    with _stage("solve"):
        q, sp = fuse_probabilities(s_g_clip, s_g_dino, bundle.image, config,
                                   debug_dir=debug_dir)
        if debug_dir:
            sp_dir = os.path.join(debug_dir, "superpixels")
            os.makedirs(sp_dir, exist_ok=True)
            write_tensor(os.path.join(sp_dir, "labels.stf"), sp.labels)
            write_segment_png(os.path.join(sp_dir, "labels.png"), sp)
            write_tensor(os.path.join(debug_dir, "q.stf"),
                         q.values.astype(np.float32))
    with _stage("labels"):
        labels = argmax_labels(q)
        label_stf = os.path.join(out_dir, "labels.stf")
        label_png = os.path.join(out_dir, "labels.png")
        write_tensor(label_stf, labels)
        write_label_png(label_png, labels, bundle.num_classes)

    metrics = None
    metrics_path = None
    if gt_path is not None:
        with _stage("eval"):
            gt = read_tensor(gt_path)
            cm = metrics_mod.ConfusionMatrix(
                num_classes=bundle.num_classes,
                ignore_index=config.eval.ignore_index)
            cm = metrics_mod.accumulate(cm, labels, gt)
            metrics = metrics_mod.metrics_dict(cm, bundle.class_names)
            metrics_path = os.path.join(out_dir, "metrics.json")
            _write_json(metrics_path, metrics)
    return PipelineResult(labels=labels, metrics=metrics, label_png=label_png,
                          label_stf=label_stf, metrics_path=metrics_path)


def run_batch(manifest_dir, config: PipelineConfig, out_dir, gt_dir=None,
              debug: bool = False, threads: int | None = None) -> dict | None:
    """Run every manifest in a directory with a bounded worker pool.

    Ground truth for <name>.json is looked up as <name>.stf in gt_dir.
    Per-image confusion matrices are merged into one combined metrics.json
    at the output root; returns the merged payload when gt was available.
    """
    manifests = sorted(
        os.path.join(manifest_dir, f) for f in os.listdir(manifest_dir)
        if f.endswith(".json"))
    if not manifests:
        raise StageFailure("load_bundle", FileNotFoundError(
            f"no manifests in {manifest_dir}"))
    os.makedirs(out_dir, exist_ok=True)

    def one(path):
        stem = os.path.splitext(os.path.basename(path))[0]
        gt = None
        if gt_dir is not None:
            candidate = os.path.join(gt_dir, stem + ".stf")
            gt = candidate if os.path.exists(candidate) else None
        res = run_pipeline(path, config, os.path.join(out_dir, stem),
                           gt_path=gt, debug=debug)
        cm = None
        names = load_bundle(path).class_names
        if gt is not None:
            cm = metrics_mod.accumulate(
                metrics_mod.ConfusionMatrix(num_classes=len(names),
                                            ignore_index=config.eval.ignore_index),
                res.labels, read_tensor(gt))
        return cm, names

    workers = threads or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, manifests))

    cms = [cm for cm, _names in results if cm is not None]
    if not cms:
        return None
    class_names = next(names for cm, names in results if cm is not None)
    payload = metrics_mod.metrics_dict(metrics_mod.merge(cms), class_names)
    _write_json(os.path.join(out_dir, "metrics.json"), payload)
    return payload
