"""Deterministic stand-ins for the pretrained backbones."""

import hashlib

import numpy as np

from exporter.backbones import SemanticOutputs, StructuralOutputs


class FakeTextEncoder:
    """Deterministic per-prompt embeddings with non-unit norms, so the
    normalize-average-renormalize path actually does something."""

    def __init__(self, dim=12):
        self.dim = dim

    def __call__(self, prompts):
        rows = []
        for prompt in prompts:
            digest = hashlib.sha256(prompt.encode()).digest()
            seed = int.from_bytes(digest[:8], "little")
            rng = np.random.default_rng(seed)
            rows.append(rng.normal(size=self.dim) * rng.uniform(0.5, 4.0))
        return np.stack(rows)


class FakeSemantic:
    def __init__(self, grid=(3, 3), dim=12, layers=3, heads=2, seed=0):
        self.grid, self.dim, self.layers, self.heads = grid, dim, layers, heads
        self.seed = seed

    def encode(self, image):
        rng = np.random.default_rng(self.seed)
        p = self.grid[0] * self.grid[1]
        pp = p + 1
        stored = self.layers - 1
        return SemanticOutputs(
            layer_features=rng.normal(size=(stored, p, self.dim)).astype(np.float32),
            layer_attention=rng.uniform(
                size=(stored, self.heads, pp, pp)).astype(np.float32),
            value_last=rng.normal(size=(pp, self.dim)).astype(np.float32),
            grid=self.grid,
            has_class_token=True,
        )


class FakeStructural:
    def __init__(self, grid=(3, 3), dim=12, layers=4, seed=1):
        self.grid, self.dim, self.layers = grid, dim, layers
        self.seed = seed

    def encode(self, image):
        rng = np.random.default_rng(self.seed)
        p = self.grid[0] * self.grid[1]
        pp = p + 1
        return StructuralOutputs(
            layer_features=rng.normal(size=(self.layers, p, self.dim))
            .astype(np.float32),
            attention_last=rng.uniform(size=(pp, pp)).astype(np.float32),
            grid=self.grid,
            has_class_token=True,
        )
