"""Graph-based greedy superpixel segmentation and boundary edge weights.

Segmentation follows the classic union-find merging scheme on the
8-connected grid graph with Euclidean RGB edge weights: components merge
while the joining edge is no heavier than the internal variation of either
side plus a size-shrinking slack (scale/|C|). A final pass absorbs
undersized components into their cheapest neighbor, and the result is
re-split into 4-connected pieces so every emitted segment id is a single
4-connected region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyImage

# direction codes used for deterministic tie-breaking in the edge sort
_DIRS_8 = ((0, 1, 0), (1, 0, 1), (1, 1, 2), (1, -1, 3))  # E, S, SE, SW
_DIRS_4 = ((0, 1, 0), (1, 0, 1))


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray     # i64, H x W, ids 0..num_segments-1
    num_segments: int

    def __post_init__(self):
        if self.labels.ndim != 2 or self.labels.dtype != np.int64:
            raise ValueError("labels must be an i64 H x W map")


@dataclass(frozen=True)
class EdgeWeightField:
    """Per-edge weights for the 4-neighbor pixel pairs of an H x W raster."""

    horizontal: np.ndarray  # f32, H x (W-1), weight between (i,j) and (i,j+1)
    vertical: np.ndarray    # f32, (H-1) x W, weight between (i,j) and (i+1,j)


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with kernel radius ceil(3*sigma), reflected edges."""
    out = image.astype(np.float64)
    if sigma <= 0:
        return out
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0)
                              for a in range(out.ndim)], mode="reflect")
        acc = np.zeros_like(out)
        for i, kv in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def _grid_edges(smooth: np.ndarray, dirs) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All directed grid edges for the given offsets, as flat index arrays."""
    h, w = smooth.shape[:2]
    srcs, dsts, weights, codes = [], [], [], []
    flat = smooth.reshape(-1, smooth.shape[2])
    idx = np.arange(h * w).reshape(h, w)
    for dy, dx, code in dirs:
        ys = slice(0, h - dy) if dy else slice(0, h)
        if dx >= 0:
            xs = slice(0, w - dx)
            xd = slice(dx, w)
        else:
            xs = slice(-dx, w)
            xd = slice(0, w + dx)
        a = idx[ys, xs].ravel()
        b = idx[dy:, xd].ravel() if dy else idx[ys, xd].ravel()
        if a.size == 0:
            continue
        diff = flat[a] - flat[b]
        srcs.append(a)
        dsts.append(b)
        weights.append(np.sqrt((diff * diff).sum(axis=1)))
        codes.append(np.full(a.size, code, dtype=np.int64))
    if not srcs:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0), z
    return (np.concatenate(srcs), np.concatenate(dsts),
            np.concatenate(weights), np.concatenate(codes))


class _UnionFind:
    __slots__ = ("parent", "size", "threshold")

    def __init__(self, n: int, scale: float):
        self.parent = list(range(n))
        self.size = [1] * n
        self.threshold = [scale] * n  # internal variation 0 + scale/1

    def find(self, x: int) -> int:
        root = x
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def segment_felzenszwalb(image: np.ndarray, scale: float = 100.0,
                         min_size: int = 50, sigma: float = 0.8) -> SuperpixelMap:
    """Segment an RGB u8 image into superpixels.

    Deterministic: edges are sorted by (weight, source index, direction
    code), and final ids follow first occurrence in row-major scan order.
    When the image holds fewer than min_size pixels the single remaining
    segment is returned as-is.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise EmptyImage(f"expected H x W x 3 RGB image, got shape {img.shape}")
    if scale <= 0 or min_size < 1 or sigma < 0:
        raise ValueError("need scale > 0, min_size >= 1, sigma >= 0")
    h, w = img.shape[:2]
    smooth = _gaussian_blur(img, sigma)

    src, dst, weight, code = _grid_edges(smooth, _DIRS_8)
    order = np.lexsort((code, src, weight))
    src_l = src[order].tolist()
    dst_l = dst[order].tolist()
    w_l = weight[order].tolist()

    uf = _UnionFind(h * w, float(scale))
    for a, b, wt in zip(src_l, dst_l, w_l):
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        if wt <= uf.threshold[ra] and wt <= uf.threshold[rb]:
            r = uf.union(ra, rb)
            uf.threshold[r] = wt + scale / uf.size[r]

    # absorb undersized components along their cheapest incident edge
    for a, b, _wt in zip(src_l, dst_l, w_l):
        ra, rb = uf.find(a), uf.find(b)
        if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
            uf.union(ra, rb)

    roots = np.fromiter((uf.find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    labels = _relabel_4connected(roots.reshape(h, w))
    labels = _absorb_small_4components(labels, smooth, min_size)
    labels, count = _scan_order_ids(labels)
    return SuperpixelMap(labels=labels, num_segments=count)


def _relabel_4connected(labels: np.ndarray) -> np.ndarray:
    """Split every id into its 4-connected components (scan-order flood fill)."""
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int64)
    nxt = 0
    for sy in range(h):
        for sx in range(w):
            if out[sy, sx] >= 0:
                continue
            seed = labels[sy, sx]
            stack = [(sy, sx)]
            out[sy, sx] = nxt
            while stack:
                y, x = stack.pop()
                for ny, nx_ in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx_ < w and out[ny, nx_] < 0 \
                            and labels[ny, nx_] == seed:
                        out[ny, nx_] = nxt
                        stack.append((ny, nx_))
            nxt += 1
    return out


def _absorb_small_4components(labels: np.ndarray, smooth: np.ndarray,
                              min_size: int) -> np.ndarray:
    """Merge 4-components below min_size into their cheapest 4-neighbor."""
    h, w = labels.shape
    n = int(labels.max()) + 1
    sizes = np.bincount(labels.ravel(), minlength=n)
    if (sizes >= min_size).all():
        return labels
    src, dst, weight, code = _grid_edges(smooth, _DIRS_4)
    order = np.lexsort((code, src, weight))
    flat = labels.ravel()
    parent = list(range(n))
    comp_size = sizes.tolist()

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(src[order].tolist(), dst[order].tolist()):
        ra, rb = find(flat[a]), find(flat[b])
        if ra != rb and (comp_size[ra] < min_size or comp_size[rb] < min_size):
            parent[rb] = ra
            comp_size[ra] += comp_size[rb]
    mapping = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    return mapping[labels]


def _scan_order_ids(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Re-index ids by first occurrence in row-major order."""
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    old_ids = flat[np.sort(first)]
    mapping = np.empty(int(flat.max()) + 1, dtype=np.int64)
    mapping[old_ids] = np.arange(old_ids.size)
    return mapping[labels], int(old_ids.size)


def build_edge_weights(sp: SuperpixelMap, w_in: float = 1.0,
                       w_cross: float = 0.10) -> EdgeWeightField:
    """Weight each 4-neighbor pixel pair: w_in inside a superpixel, w_cross
    across a boundary (w_cross + (w_in - w_cross) * [same segment])."""
    if w_in <= 0 or w_cross <= 0:
        raise ValueError("edge weights must be positive")
    lab = sp.labels
    same_h = (lab[:, :-1] == lab[:, 1:])
    same_v = (lab[:-1, :] == lab[1:, :])
    horizontal = np.where(same_h, w_in, w_cross).astype(np.float32)
    vertical = np.where(same_v, w_in, w_cross).astype(np.float32)
    return EdgeWeightField(horizontal=horizontal, vertical=vertical)
