"""Anchored random-walk smoothing of score maps over transition graphs.

Each step mixes one random-walk hop with the original scores:

    S(i) = alpha * T @ S(i-1) + (1 - alpha) * S(0)

so the iterate stays anchored to the input and converges geometrically to
(1-alpha) * (I - alpha*T)^{-1} @ S(0). The bidirectional variant swaps the
graphs between branches: semantic scores walk on the structural graph and
structural scores walk on the semantic graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention_fusion import ScoreMap
from .errors import ShapeMismatch
from .transition import TransitionMatrix


@dataclass(frozen=True)
class DiffusionParams:
    alpha: float = 0.9
    steps: int = 40

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


def diffuse(t: TransitionMatrix, s0: ScoreMap, p: DiffusionParams) -> ScoreMap:
    """Run the anchored diffusion recursion for p.steps iterations."""
    if t.num_nodes != s0.values.shape[0]:
        raise ShapeMismatch(
            f"graph has {t.num_nodes} nodes, scores have {s0.values.shape[0]} rows")
    anchor = s0.values.astype(np.float64)
    s = anchor.copy()
    for _ in range(p.steps):
        s = p.alpha * t.matvec(s) + (1.0 - p.alpha) * anchor
    return ScoreMap(values=s, grid=s0.grid)


def refine_bidirectional(t_clip: TransitionMatrix, t_dino: TransitionMatrix,
                         s_clip: ScoreMap, s_dino: ScoreMap,
                         p: DiffusionParams) -> tuple[ScoreMap, ScoreMap]:
    """Cross-graph refinement: the semantic scores propagate on the
    structural graph and the structural scores on the semantic graph.
    The two runs are independent of each other."""
    return diffuse(t_dino, s_clip, p), diffuse(t_clip, s_dino, p)
