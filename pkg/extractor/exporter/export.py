"""Assemble backbone outputs into an on-disk feature bundle.

One STF1 file per tensor role plus a manifest.json carrying grid
geometry, class-token flags, and class names. Shapes are cross-checked
here so a bad export fails in the exporter, not in the consumer.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .backbones import SemanticOutputs, StructuralOutputs
from .stf1 import write_tensor


def _check(semantic: SemanticOutputs, structural: StructuralOutputs,
           text: np.ndarray, class_names) -> None:
    p_sem = semantic.grid[0] * semantic.grid[1]
    p_sem_attn = p_sem + (1 if semantic.has_class_token else 0)
    if semantic.layer_features.shape[1] != p_sem:
        raise ValueError("semantic features disagree with the grid")
    if semantic.layer_attention.shape[0] != semantic.layer_features.shape[0]:
        raise ValueError("semantic attention and feature layer counts differ")
    if semantic.layer_attention.shape[2:] != (p_sem_attn, p_sem_attn):
        raise ValueError("semantic attention is not square over the grid")
    if semantic.value_last.shape[0] != p_sem_attn:
        raise ValueError("value matrix rows disagree with the attention size")

    p_str = structural.grid[0] * structural.grid[1]
    p_str_attn = p_str + (1 if structural.has_class_token else 0)
    if structural.layer_features.shape[1] != p_str:
        raise ValueError("structural features disagree with the grid")
    if structural.attention_last.shape != (p_str_attn, p_str_attn):
        raise ValueError("structural attention is not square over the grid")

    if text.ndim != 2 or text.shape[0] != len(class_names):
        raise ValueError("need one text embedding row per class")
    if text.shape[1] != semantic.layer_features.shape[2]:
        raise ValueError("text embeddings and semantic features differ in dim")


def export_bundle(image: np.ndarray, semantic: SemanticOutputs,
                  structural: StructuralOutputs, text_embeddings: np.ndarray,
                  class_names, out_dir) -> str:
    """Write the bundle into out_dir; returns the manifest path."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("image must be RGB u8")
    _check(semantic, structural, text_embeddings, class_names)
    os.makedirs(out_dir, exist_ok=True)

    tensors = {
        "image": image,
        "clip_layer_features": semantic.layer_features,
        "clip_layer_attn": semantic.layer_attention,
        "clip_value_last": semantic.value_last,
        "dino_layer_features": structural.layer_features,
        "dino_attn_last": structural.attention_last,
        "text_embeddings": text_embeddings.astype(np.float32),
    }
    manifest = {}
    for role, tensor in tensors.items():
        fname = f"{role}.stf"
        write_tensor(os.path.join(out_dir, fname), tensor)
        manifest[role] = fname
    manifest.update({
        "grid_clip": list(semantic.grid),
        "grid_dino": list(structural.grid),
        "has_class_token_clip": semantic.has_class_token,
        "has_class_token_dino": structural.has_class_token,
        "class_names": list(class_names),
    })
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path
