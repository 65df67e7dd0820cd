"""Synthetic feature bundles with known ground truth.

Patches are split into vertical class stripes; every patch feature is the
(orthonormal) embedding of its class, optionally perturbed with Gaussian
noise, and attention stacks are identity so the derived last layer
reproduces the stored value rows. Cosine logits are then exactly one-hot
in the noise-free case, which makes these bundles usable as end-to-end
oracles: the pipeline must recover the stripe layout perfectly.
"""

from __future__ import annotations

import numpy as np

from .tensorio import FeatureBundle


def build_synthetic_bundle(grid=(8, 8), patch_px=4, num_classes=2,
                           feature_dim=16, layers=2, noise=0.0,
                           seed=0) -> tuple[FeatureBundle, np.ndarray]:
    """Class-striped bundle plus its pixel ground truth (i64, H x W).

    `layers` counts total semantic-branch layers, so `layers - 1`
    intermediate feature/attention layers are stored. `noise` is the
    standard deviation added to every stored feature tensor (the clean
    features have unit amplitude).
    """
    rows, cols = grid
    if num_classes > cols or num_classes > feature_dim or layers < 2:
        raise ValueError("need cols >= classes, dim >= classes, layers >= 2")
    rng = np.random.default_rng(seed)
    p = rows * cols

    text = np.zeros((num_classes, feature_dim), dtype=np.float64)
    text[np.arange(num_classes), np.arange(num_classes)] = 1.0

    patch_class = (np.arange(cols) * num_classes) // cols      # per column
    patch_class = np.tile(patch_class, (rows, 1)).ravel()       # per patch
    clean = text[patch_class]                                   # P x D

    def noisy(shape_like):
        out = shape_like.copy()
        if noise > 0:
            out = out + noise * rng.normal(size=out.shape)
        return out.astype(np.float32)

    n_stored = layers - 1
    clip_features = np.stack([noisy(clean) for _ in range(n_stored)], axis=0)
    clip_attn = np.broadcast_to(np.eye(p, dtype=np.float32),
                                (n_stored, 1, p, p)).copy()
    clip_value = noisy(clean)
    dino_features = np.stack([noisy(clean), noisy(clean)], axis=0)
    dino_attn = np.eye(p, dtype=np.float32)

    h, w = rows * patch_px, cols * patch_px
    shades = np.linspace(40, 215, num_classes).astype(np.uint8)
    pixel_class = patch_class.reshape(rows, cols)
    pixel_class = np.repeat(np.repeat(pixel_class, patch_px, 0), patch_px, 1)
    image = np.stack([shades[pixel_class]] * 3, axis=2)

    bundle = FeatureBundle(
        image=image,
        clip_layer_features=clip_features,
        clip_layer_attn=clip_attn,
        clip_value_last=clip_value,
        dino_layer_features=dino_features,
        dino_attn_last=dino_attn,
        text_embeddings=text.astype(np.float32),
        grid_clip=(rows, cols),
        grid_dino=(rows, cols),
        has_class_token_clip=False,
        has_class_token_dino=False,
        class_names=tuple(f"class_{i}" for i in range(num_classes)),
    )
    return bundle, pixel_class.astype(np.int64)
