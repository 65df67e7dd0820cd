"""Backbone wrappers and image preparation.

The exporter is written against two small output contracts (semantic and
structural) so the real pretrained wrappers and the deterministic test
fakes are interchangeable. The real wrappers need `torch` plus downloaded
weights (open_clip for the semantic branch, torch.hub for the structural
one); without them they raise WeightsUnavailable instead of crashing
somewhere inside a framework.

Joint-space convention: semantic per-layer features and the last value
matrix are exported already mapped through the model's final norm and
visual projection, so they live in the same space as the text embeddings.
Structural features are raw block outputs. Class tokens are stripped from
feature tensors but kept (index 0) in attention/value tensors, with the
manifest flags set accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

INPUT_SIDE = 512


class WeightsUnavailable(RuntimeError):
    """Pretrained weights or the frameworks to run them are missing."""


class ResolutionIncompatible(RuntimeError):
    """The backbone cannot form a patch grid for the prepared input."""


@dataclass(frozen=True)
class SemanticOutputs:
    layer_features: np.ndarray    # f32, L x P x D (intermediate layers)
    layer_attention: np.ndarray   # f32, L x H x P' x P'
    value_last: np.ndarray        # f32, P' x D
    grid: tuple[int, int]
    has_class_token: bool


@dataclass(frozen=True)
class StructuralOutputs:
    layer_features: np.ndarray    # f32, N x P x D (all layers)
    attention_last: np.ndarray    # f32, P' x P', head-averaged
    grid: tuple[int, int]
    has_class_token: bool


def load_image_512(path) -> np.ndarray:
    """RGB u8 512 x 512: shorter side resized to 512, then center crop."""
    img = Image.open(path).convert("RGB")
    w, h = img.size
    scale = INPUT_SIDE / min(w, h)
    img = img.resize((max(INPUT_SIDE, round(w * scale)),
                      max(INPUT_SIDE, round(h * scale))), Image.BILINEAR)
    w, h = img.size
    left, top = (w - INPUT_SIDE) // 2, (h - INPUT_SIDE) // 2
    img = img.crop((left, top, left + INPUT_SIDE, top + INPUT_SIDE))
    return np.asarray(img, dtype=np.uint8)


def _require_torch():
    try:
        import torch  # noqa: F401
        return torch
    except ImportError as exc:
        raise WeightsUnavailable(
            "torch is required to run pretrained backbones "
            "(pip install 'bundle-extractor[backbones]')") from exc


def _to_batch(torch, image: np.ndarray, mean, std):
    x = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
    mean_t = torch.tensor(mean).view(3, 1, 1)
    std_t = torch.tensor(std).view(3, 1, 1)
    return ((x - mean_t) / std_t).unsqueeze(0)


class ClipL14Semantic:
    """OpenAI CLIP ViT-L/14 via open_clip, with per-layer taps.

    Per-layer attention is recomputed from each block's in-projection so
    all heads are available; positional embeddings are bicubically
    interpolated to the effective grid of the 512 input.
    """

    _MEAN = (0.48145466, 0.4578275, 0.40821073)
    _STD = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, device: str = "cpu"):
        torch = _require_torch()
        try:
            import open_clip
        except ImportError as exc:
            raise WeightsUnavailable(
                "open_clip is required for the semantic branch "
                "(pip install open_clip_torch)") from exc
        try:
            self._model, _, _ = open_clip.create_model_and_transforms(
                "ViT-L-14", pretrained="openai")
            self._tokenizer = open_clip.get_tokenizer("ViT-L-14")
        except Exception as exc:  # weight download / cache failures
            raise WeightsUnavailable(f"cannot load CLIP ViT-L/14: {exc}") from exc
        self._model = self._model.eval().to(device)
        self._device = device
        self._torch = torch

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            tokens = self._tokenizer(prompts).to(self._device)
            emb = self._model.encode_text(tokens)
            emb = emb / emb.norm(dim=-1, keepdim=True)
        return emb.cpu().numpy().astype(np.float32)

    def encode(self, image: np.ndarray) -> SemanticOutputs:
        torch = self._torch
        visual = self._model.visual
        patch = visual.conv1.kernel_size[0]
        side = image.shape[0]
        grid = side // patch
        if grid < 2:
            raise ResolutionIncompatible(f"{side} px input, {patch} px patches")

        x = _to_batch(torch, image, self._MEAN, self._STD).to(self._device)
        with torch.no_grad():
            feat = visual.conv1(x)                            # 1 x W x g x g
            feat = feat.flatten(2).transpose(1, 2)            # 1 x P x W
            cls = visual.class_embedding.to(feat.dtype).expand(1, 1, -1)
            feat = torch.cat([cls, feat], dim=1)
            feat = feat + _interp_pos_embed(torch, visual.positional_embedding,
                                            grid).to(feat.dtype)
            if hasattr(visual, "patch_dropout"):
                feat = visual.patch_dropout(feat)
            feat = visual.ln_pre(feat)

            blocks = visual.transformer.resblocks
            layer_feats, layer_attn = [], []
            value_last = None
            seq = feat
            for idx, block in enumerate(blocks):
                normed = block.ln_1(seq)
                probs, values = _mha_probs_and_values(torch, block.attn, normed)
                if idx == len(blocks) - 1:
                    merged = values.transpose(0, 1).reshape(normed.shape[1], -1)
                    value_last = block.attn.out_proj(merged)
                else:
                    layer_attn.append(probs)
                seq = seq + block.attn(normed, normed, normed,
                                       need_weights=False)[0]
                seq = seq + block.mlp(block.ln_2(seq))
                if idx < len(blocks) - 1:
                    layer_feats.append(seq[0])

            def project(tokens):
                return visual.ln_post(tokens) @ visual.proj

            features = np.stack(
                [project(f)[1:].cpu().numpy() for f in layer_feats]).astype(np.float32)
            attention = np.stack([a.cpu().numpy() for a in layer_attn]).astype(np.float32)
            value = project(value_last).cpu().numpy().astype(np.float32)
        return SemanticOutputs(layer_features=features, layer_attention=attention,
                               value_last=value, grid=(grid, grid),
                               has_class_token=True)


def _interp_pos_embed(torch, pos, grid):
    """Bicubic interpolation of a (1 + g0*g0) x D table to grid x grid."""
    import torch.nn.functional as functional
    cls_pos, patch_pos = pos[:1], pos[1:]
    g0 = int(round(float(patch_pos.shape[0]) ** 0.5))
    if g0 == grid:
        return pos.unsqueeze(0)
    table = patch_pos.reshape(1, g0, g0, -1).permute(0, 3, 1, 2)
    table = functional.interpolate(table, size=(grid, grid), mode="bicubic",
                                   align_corners=False)
    table = table.permute(0, 2, 3, 1).reshape(grid * grid, -1)
    return torch.cat([cls_pos, table], dim=0).unsqueeze(0)


def _mha_probs_and_values(torch, attn, normed):
    """All-head attention probabilities and per-head values of one block.

    `normed` is 1 x P' x D; returns probs (H x P' x P') and values
    (H x P' x d_head) recomputed from the in-projection weights.
    """
    seq = normed[0]
    width = seq.shape[1]
    heads = attn.num_heads
    qkv = seq @ attn.in_proj_weight.t() + attn.in_proj_bias
    q, k, v = qkv.split(width, dim=1)
    d_head = width // heads
    q = q.reshape(-1, heads, d_head).transpose(0, 1)
    k = k.reshape(-1, heads, d_head).transpose(0, 1)
    v = v.reshape(-1, heads, d_head).transpose(0, 1)
    probs = torch.softmax(q @ k.transpose(1, 2) / d_head ** 0.5, dim=-1)
    return probs, v


class DinoStructural:
    """DINO v1 (ViT-B/8) or v2 (ViT-B/14) via torch.hub, with block taps."""

    _HUB = {
        "dinov1_b8": ("facebookresearch/dino:main", "dino_vitb8"),
        "dinov2_b14": ("facebookresearch/dinov2", "dinov2_vitb14"),
    }
    _MEAN = (0.485, 0.456, 0.406)
    _STD = (0.229, 0.224, 0.225)

    def __init__(self, variant: str, device: str = "cpu"):
        torch = _require_torch()
        if variant not in self._HUB:
            raise ValueError(f"unknown structural variant '{variant}'")
        repo, name = self._HUB[variant]
        try:
            self._model = torch.hub.load(repo, name).eval().to(device)
        except Exception as exc:  # hub download / cache failures
            raise WeightsUnavailable(
                f"cannot load {name} from torch.hub: {exc}") from exc
        self._variant = variant
        self._device = device
        self._torch = torch

    def encode(self, image: np.ndarray) -> StructuralOutputs:
        torch = self._torch
        patch = self._model.patch_embed.patch_size
        patch = patch[0] if isinstance(patch, (tuple, list)) else patch
        side = image.shape[0]
        if self._variant == "dinov2_b14" and side % patch != 0:
            side = (side // patch) * patch  # dinov2 requires exact multiples
            image = np.asarray(
                Image.fromarray(image).resize((side, side), Image.BILINEAR))
        grid = side // patch
        if grid < 2:
            raise ResolutionIncompatible(f"{side} px input, {patch} px patches")

        x = _to_batch(torch, image, self._MEAN, self._STD).to(self._device)
        captured_feats = []
        captured_attn_in = []

        def block_hook(_module, _inputs, output):
            captured_feats.append(output[0] if isinstance(output, tuple) else output)

        last_block = self._model.blocks[-1]

        def attn_in_hook(_module, inputs, _output):
            captured_attn_in.append(inputs[0])

        handles = [b.register_forward_hook(block_hook) for b in self._model.blocks]
        handles.append(last_block.attn.register_forward_hook(attn_in_hook))
        try:
            with torch.no_grad():
                self._model(x)
                attn_seq = captured_attn_in[0]
                qkv = last_block.attn.qkv(attn_seq)
                b, n, _ = attn_seq.shape
                heads = last_block.attn.num_heads
                qkv = qkv.reshape(b, n, 3, heads, -1).permute(2, 0, 3, 1, 4)
                q, k = qkv[0], qkv[1]
                scale = q.shape[-1] ** -0.5
                probs = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
                attention = probs[0].mean(dim=0).cpu().numpy().astype(np.float32)
        finally:
            for handle in handles:
                handle.remove()

        prefix = 1 + getattr(self._model, "num_register_tokens", 0)
        features = np.stack(
            [f[0, prefix:].cpu().numpy() for f in captured_feats]).astype(np.float32)
        if prefix > 1:  # drop register columns, keep the class token slot
            keep = [0] + list(range(prefix, attention.shape[0]))
            attention = attention[np.ix_(keep, keep)]
        return StructuralOutputs(layer_features=features, attention_last=attention,
                                 grid=(grid, grid), has_class_token=True)


BACKBONE_CHOICES = ("clip_l14+dinov1_b8", "clip_l14+dinov2_b14")


def load_backbone_pair(choice: str, device: str = "cpu"):
    """(semantic, structural) wrappers for a CLI backbone choice."""
    if choice not in BACKBONE_CHOICES:
        raise ValueError(f"--backbone must be one of {BACKBONE_CHOICES}")
    semantic = ClipL14Semantic(device=device)
    structural = DinoStructural(choice.split("+")[1], device=device)
    return semantic, structural
