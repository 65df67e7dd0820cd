"""Prompt specifications and class text embeddings.

A prompt spec maps each class name to one or more prompt strings under a
named mode: `ori` uses official dataset names, `gen` curated generalized
names, `set_of_gen` a whole candidate set per class. Multi-prompt classes
are embedded per prompt, unit-normalized, averaged, and re-normalized, so
every class contributes exactly one unit row regardless of mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MODES = ("ori", "gen", "set_of_gen")
DEFAULT_TEMPLATE = "a photo of a {}."


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    classes: tuple[tuple[str, tuple[str, ...]], ...]  # (name, prompts)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not self.classes:
            raise ValueError("prompt spec needs at least one class")
        names = [name for name, _prompts in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for name, prompts in self.classes:
            if not name or not prompts or any(not p for p in prompts):
                raise ValueError(f"class '{name}' needs non-empty prompts")

    @property
    def class_names(self) -> list[str]:
        return [name for name, _prompts in self.classes]


def load_prompt_spec(path) -> PromptSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        classes = tuple(
            (entry["name"], tuple(entry["prompts"])) for entry in data["classes"])
        return PromptSpec(mode=data["mode"], classes=classes)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed prompt spec {path}: {exc}") from exc


def build_text_embeddings(spec: PromptSpec, encode_text,
                          template: str = DEFAULT_TEMPLATE) -> np.ndarray:
    """One unit-norm embedding row per class (f32, K x D).

    `encode_text(list[str]) -> (n, D)` supplies raw prompt embeddings;
    each is normalized before averaging so long prompts don't dominate.
    """
    rows = []
    for _name, prompts in spec.classes:
        raw = np.asarray(encode_text([template.format(p) for p in prompts]),
                         dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] != len(prompts):
            raise ValueError("encoder must return one row per prompt")
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ValueError("text encoder produced a zero embedding")
        mean = (raw / norms).mean(axis=0)
        rows.append(mean / np.linalg.norm(mean))
    return np.stack(rows).astype(np.float32)
