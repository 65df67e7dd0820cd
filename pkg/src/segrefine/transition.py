"""Row-stochastic k-nearest-neighbor transition matrices over patch nodes.

Pairwise cosine similarities are sparsified to the top-k non-diagonal
entries per row (ties broken by the lower column index), pushed through a
temperature exponential and row-normalized. Both branch graphs are built
the same way and act on the same node set, which is what lets scores from
one branch walk on the other branch's graph.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyLayerAxis


@dataclass(frozen=True)
class TransitionMatrix:
    """Sparse row-stochastic P x P matrix, min(k, P-1) neighbors per row.

    Rows whose retained weights degenerate to zero mass (only possible for
    non-finite similarity inputs) fall back to a uniform 1/P distribution
    and are flagged in `uniform_rows`.
    """

    indices: np.ndarray       # i64, P x k, neighbor columns (ascending)
    values: np.ndarray        # f32, P x k, weights summing to 1 per row
    uniform_rows: np.ndarray  # bool, P
    grid: tuple[int, int]

    @property
    def num_nodes(self) -> int:
        return self.indices.shape[0]

    @property
    def neighbors_per_row(self) -> int:
        return self.indices.shape[1]

    def matvec(self, scores: np.ndarray) -> np.ndarray:
        """Row-stochastic product T @ scores in double precision."""
        s = np.asarray(scores, dtype=np.float64)
        out = np.einsum("pk,pkc->pc", self.values.astype(np.float64), s[self.indices])
        if self.uniform_rows.any():
            out[self.uniform_rows] = s.mean(axis=0)
        return out

    def to_dense(self) -> np.ndarray:
        p = self.num_nodes
        dense = np.zeros((p, p), dtype=np.float64)
        np.put_along_axis(dense, self.indices, self.values.astype(np.float64), axis=1)
        if self.uniform_rows.any():
            dense[self.uniform_rows] = 1.0 / p
        return dense


def mean_features(stack: np.ndarray) -> np.ndarray:
    """Average a layer stack (N x P x D) and unit-normalize each row."""
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise EmptyLayerAxis(f"need a non-empty N x P x D stack, got {stack.shape}")
    mean = stack.astype(np.float64).mean(axis=0)
    norms = np.linalg.norm(mean, axis=1, keepdims=True)
    return np.divide(mean, norms, out=np.zeros_like(mean), where=norms > 0)


def build_transition(features: np.ndarray, k: int, tau: float,
                     grid: tuple[int, int]) -> TransitionMatrix:
    """kNN transition matrix from unit-norm feature rows (P x D)."""
    p = features.shape[0]
    if p < 2:
        raise ValueError("need at least two nodes")
    if k < 1 or tau <= 0:
        raise ValueError("need k >= 1 and tau > 0")
    if k >= p:
        warnings.warn(f"k={k} >= node count {p}; clamping to {p - 1}", stacklevel=2)
        k = p - 1
    f = np.asarray(features, dtype=np.float64)
    sims = f @ f.T
    return transition_from_similarities(sims, k, tau, grid)


def transition_from_similarities(sims: np.ndarray, k: int, tau: float,
                                 grid: tuple[int, int]) -> TransitionMatrix:
    """Sparsify a dense similarity matrix into a transition matrix.

    Split out from build_transition so degenerate similarity rows (and
    test oracles) can drive the normalization path directly.
    """
    p = sims.shape[0]
    k = min(k, p - 1)
    masked = np.array(sims, dtype=np.float64)
    np.fill_diagonal(masked, -np.inf)
    # stable argsort on the negated rows keeps equal values in ascending
    # column order, which is the tie-break contract
    order = np.argsort(-masked, axis=1, kind="stable")[:, :k]
    indices = np.sort(order, axis=1)
    vals = np.take_along_axis(masked, indices, axis=1)

    finite_max = np.where(np.isfinite(vals), vals, -np.inf).max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(finite_max), finite_max, 0.0)
    weights = np.exp((vals - shift) / tau)
    weights[~np.isfinite(weights)] = 0.0
    row_sums = weights.sum(axis=1, keepdims=True)
    ok = np.isfinite(row_sums) & (row_sums > 0)
    weights = np.divide(weights, row_sums, out=np.zeros_like(weights), where=ok)
    return TransitionMatrix(
        indices=indices.astype(np.int64),
        values=weights.astype(np.float32),
        uniform_rows=~ok[:, 0],
        grid=tuple(grid),
    )
