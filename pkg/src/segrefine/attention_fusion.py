"""Cross-branch attention fusion producing preliminary per-patch scores.

The semantic branch replaces its last layer's attention with the layer
average, sharpened by symmetrizing, thresholding at the per-head global
mean and re-normalizing rows, then projects through the stored value
matrix. The structural branch keeps its own per-layer features, unit
normalized. Each branch scores its features against the text embeddings
and the two effective attention maps are injected into each other before
the final mix, so both score maps carry structure and semantics at once.

All spatial math runs on the semantic-branch grid; structural-branch
score maps and attention are bilinearly resampled onto it first. Class
tokens (row/column 0 of attention and value tensors, when flagged) are
dropped right after the last-layer feature and attention are formed, so
everything downstream is purely spatial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyLayerAxis, ShapeMismatch
from .resample import resize_grid_scores, resize_plane
from .tensorio import FeatureBundle


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray       # P x P over spatial patches, class token stripped
    grid: tuple[int, int]

    def __post_init__(self):
        p = self.grid[0] * self.grid[1]
        if self.values.shape != (p, p):
            raise ShapeMismatch(
                f"attention {self.values.shape} does not match grid {self.grid}")
        if not np.isfinite(self.values).all():
            raise ShapeMismatch("attention map contains non-finite entries")


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray       # P x K per-patch per-class logits
    grid: tuple[int, int]

    def __post_init__(self):
        p = self.grid[0] * self.grid[1]
        if self.values.ndim != 2 or self.values.shape[0] != p:
            raise ShapeMismatch(
                f"scores {self.values.shape} do not match grid {self.grid}")
        if not np.isfinite(self.values).all():
            raise ShapeMismatch("score map contains non-finite entries")

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FusedScores:
    """run_caf output: fused score maps plus the per-layer feature stacks
    (with the derived last semantic layer appended) for graph building."""

    s_clip: ScoreMap
    s_dino: ScoreMap
    clip_stack: np.ndarray   # N x P x D_c on the semantic grid
    dino_stack: np.ndarray   # N_d x P x D_d resampled to the semantic grid


def average_attention(layer_attn: np.ndarray) -> np.ndarray:
    """Mean over the layer axis of an (L, heads, P', P') attention stack."""
    if layer_attn.ndim != 4 or layer_attn.shape[0] == 0:
        raise EmptyLayerAxis(f"need a non-empty layer axis, got {layer_attn.shape}")
    return layer_attn.astype(np.float64).mean(axis=0)


def sharpen_and_project(a_avg: np.ndarray, v_last: np.ndarray,
                        has_class_token: bool) -> np.ndarray:
    """Turn averaged attention into last-layer features.

    Per head: symmetrize, subtract that head's global mean, clamp negatives,
    l1-normalize rows (all-zero rows stay zero), multiply by the value
    matrix; average the heads. The class-token row is dropped from the
    result when present.
    """
    if a_avg.ndim != 3 or a_avg.shape[1] != a_avg.shape[2]:
        raise ShapeMismatch(f"expected heads x P' x P', got {a_avg.shape}")
    if v_last.ndim != 2 or v_last.shape[0] != a_avg.shape[1]:
        raise ShapeMismatch(
            f"value rows {v_last.shape} do not match attention size {a_avg.shape[1]}")
    a = a_avg.astype(np.float64)
    sym = 0.5 * (a + a.transpose(0, 2, 1))
    mu = a.mean(axis=(1, 2), keepdims=True)
    b = np.maximum(sym - mu, 0.0)
    row_sums = b.sum(axis=2, keepdims=True)
    b = np.divide(b, row_sums, out=np.zeros_like(b), where=row_sums > 0)
    feats = np.einsum("hpq,qd->pd", b, v_last.astype(np.float64)) / a.shape[0]
    if has_class_token:
        feats = feats[1:]
    return feats


def head_average(a_avg: np.ndarray, has_class_token: bool,
                 grid: tuple[int, int]) -> AttentionMap:
    """Mean over heads, class token stripped to the spatial P x P block."""
    att = a_avg.astype(np.float64).mean(axis=0)
    if has_class_token:
        att = att[1:, 1:]
    return AttentionMap(values=att, grid=grid)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def normalize_dino_layers(raw: np.ndarray) -> np.ndarray:
    """Unit-normalize every patch vector of every layer (zeros stay zero)."""
    return _unit_rows(raw.astype(np.float64))


def compute_logits(features: np.ndarray, text: np.ndarray,
                   grid: tuple[int, int]) -> ScoreMap:
    """Cosine similarity of each patch feature against each class embedding."""
    if features.shape[1] != text.shape[1]:
        raise DimensionMismatch(
            f"feature dim {features.shape[1]} != text dim {text.shape[1]}")
    f = _unit_rows(features.astype(np.float64))
    t = _unit_rows(text.astype(np.float64))
    return ScoreMap(values=f @ t.T, grid=grid)


def align(a: AttentionMap, target_grid: tuple[int, int]) -> AttentionMap:
    """Resample a patch-to-patch attention map onto another grid.

    Both index axes are treated as spatial grids and bilinearly resized;
    negative interpolation artifacts are clamped and rows re-normalized to
    sum 1 (fully-clamped rows stay zero). Identity when grids match.
    """
    if a.grid == tuple(target_grid):
        return a
    r, c = a.grid
    rt, ct = target_grid
    four = a.values.reshape(r, c, r, c)
    four = resize_plane(four, (rt, ct))
    # swap the index pairs, resample the (now leading) second pair, swap back
    four = np.moveaxis(np.moveaxis(four, 2, 0), 3, 1)
    four = resize_plane(four, (rt, ct))
    four = np.moveaxis(np.moveaxis(four, 2, 0), 3, 1)
    pt = rt * ct
    out = np.maximum(four.reshape(pt, pt), 0.0)
    row_sums = out.sum(axis=1, keepdims=True)
    out = np.divide(out, row_sums, out=np.zeros_like(out), where=row_sums > 0)
    return AttentionMap(values=out, grid=(rt, ct))


def cross_fuse(s_last: ScoreMap, s_layers: list[ScoreMap], a_self: AttentionMap,
               a_other: AttentionMap, lambda1: float) -> ScoreMap:
    """Mix the last-layer scores through both branches' attention and add
    the mean of the intermediate-layer scores. The same formula serves both
    branches; only which attention counts as `self` changes."""
    if not s_layers:
        raise EmptyLayerAxis("need at least one intermediate score map")
    grid = s_last.grid
    shape = s_last.values.shape
    for sm in s_layers:
        if sm.grid != grid or sm.values.shape != shape:
            raise ShapeMismatch("intermediate score maps disagree with the last layer")
    if a_self.grid != grid or a_other.grid != grid:
        raise ShapeMismatch("attention maps must live on the score grid")
    attn = a_self.values + lambda1 * a_other.values
    layer_mean = np.mean([sm.values for sm in s_layers], axis=0)
    return ScoreMap(values=attn @ s_last.values + layer_mean, grid=grid)


def run_caf(bundle: FeatureBundle, lambda1: float = 1.0) -> FusedScores:
    """Full fusion pass over one bundle.

    Produces both fused score maps on the semantic-branch grid, plus the
    feature stacks that the transition-graph builder consumes (semantic
    stack with the derived last layer appended; structural stack unit
    normalized and resampled to the same grid).
    """
    grid_c = bundle.grid_clip
    grid_d = bundle.grid_dino
    text = bundle.text_embeddings.astype(np.float64)

    a_avg = average_attention(bundle.clip_layer_attn)
    f_last_clip = sharpen_and_project(a_avg, bundle.clip_value_last,
                                      bundle.has_class_token_clip)
    a_clip = head_average(a_avg, bundle.has_class_token_clip, grid_c)
    s_last_clip = compute_logits(f_last_clip, text, grid_c)
    s_layers_clip = [compute_logits(layer.astype(np.float64), text, grid_c)
                     for layer in bundle.clip_layer_features]

    dino_norm = normalize_dino_layers(bundle.dino_layer_features)
    if dino_norm.shape[0] < 2:
        raise EmptyLayerAxis("structural branch needs at least two layers")
    att_d = bundle.dino_attn_last.astype(np.float64)
    if bundle.has_class_token_dino:
        att_d = att_d[1:, 1:]
    a_dino = align(AttentionMap(values=att_d, grid=grid_d), grid_c)

    s_dino_all = [ScoreMap(resize_grid_scores(
        compute_logits(layer, text, grid_d).values, grid_d, grid_c), grid_c)
        for layer in dino_norm]
    s_last_dino = s_dino_all[-1]
    s_layers_dino = s_dino_all[:-1]

    s_clip = cross_fuse(s_last_clip, s_layers_clip, a_clip, a_dino, lambda1)
    s_dino = cross_fuse(s_last_dino, s_layers_dino, a_dino, a_clip, lambda1)

    clip_stack = np.concatenate(
        [bundle.clip_layer_features.astype(np.float64), f_last_clip[None]], axis=0)
    dino_stack = np.stack(
        [resize_grid_scores(layer, grid_d, grid_c) for layer in dino_norm], axis=0)
    return FusedScores(s_clip=s_clip, s_dino=s_dino,
                       clip_stack=clip_stack, dino_stack=dino_stack)
